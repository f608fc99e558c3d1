//! Feed-forward networks whose penultimate layer is the regression feature map.
//!
//! Layout: `input → hidden_layers… → penultimate (width d_φ) → linear output`.
//! Every layer except the output applies the activation. The network is
//! fitted by mini-batch Adam on mean-squared error; [`Mlp::embed`] returns the
//! penultimate activations that Bayesian linear regression then consumes.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x · sigmoid(x)`.
    Swish,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Swish => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Swish => {
                let s = 1.0 / (1.0 + (-z).exp());
                s + z * s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// Global Lipschitz constant of the nonlinearity.
    pub fn lipschitz(self) -> f64 {
        match self {
            // max of s + z s (1 - s), attained near z ≈ 2.4
            Activation::Swish => 1.0999,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub penultimate_width: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Cap on optimizer steps per call to [`Mlp::train`].
    pub max_steps: usize,
    pub normalize_inputs: bool,
}

impl MlpSpec {
    /// Defaults: one 200-wide hidden layer followed by a penultimate layer of
    /// width `max(8, input_dim)`, swish, Adam at 1e-3, batch 32, 5 epochs.
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: vec![200],
            penultimate_width: input_dim.max(8),
            output_dim,
            activation: Activation::Swish,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 5,
            max_steps: 2000,
            normalize_inputs: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.penultimate_width == 0 {
            return Err(Error::InvalidParameter("network widths must be at least 1".into()));
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("hidden layer widths must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// `[input, hidden…, penultimate, output]`.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_layers.len() + 3);
        widths.push(self.input_dim);
        widths.extend(&self.hidden_layers);
        widths.push(self.penultimate_width);
        widths.push(self.output_dim);
        widths
    }
}

/// Dense layer computing `x W + b` for row inputs `x`; `weights` is fan_in × fan_out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    fn affine(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = input * &self.weights;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[j]);
        }
        z
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
    input_shift: DVector<f64>,
    input_scale: DVector<f64>,
}

/// Training failed with a non-finite loss; `last_finite` holds the most
/// recent parameters whose loss was finite.
#[derive(Debug, Clone)]
pub struct TrainError {
    pub message: String,
    pub last_finite: Box<Mlp>,
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training diverged: {}", self.message)
    }
}

impl std::error::Error for TrainError {}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub net: Mlp,
    /// Full-data MSE after each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

struct ForwardCache {
    /// activations[0] is the normalized input, activations[l + 1] the output of layer l.
    activations: Vec<DMatrix<f64>>,
    pre_activations: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, identity input normalization.
    pub fn new(spec: MlpSpec, rng: &mut StreamRng) -> Result<Self> {
        spec.validate()?;
        let widths = spec.layer_widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-limit..limit)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self {
            input_shift: DVector::zeros(spec.input_dim),
            input_scale: DVector::from_element(spec.input_dim, 1.0),
            spec,
            layers,
        })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let widths = spec.layer_widths();
        if layers.len() != widths.len() - 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} layers, got {}",
                widths.len() - 1,
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.weights.shape() != (widths[l], widths[l + 1]) || layer.bias.len() != widths[l + 1] {
                return Err(Error::DimensionMismatch(format!("layer {l} has the wrong shape")));
            }
        }
        Ok(Self {
            input_shift: DVector::zeros(spec.input_dim),
            input_scale: DVector::from_element(spec.input_dim, 1.0),
            spec,
            layers,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.penultimate_width
    }

    pub fn input_scale(&self) -> &DVector<f64> {
        &self.input_scale
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    fn check_inputs(&self, inputs: &DMatrix<f64>) -> Result<()> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.spec.input_dim,
                inputs.ncols()
            )));
        }
        Ok(())
    }

    fn normalize(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = inputs.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let (shift, scale) = (self.input_shift[j], self.input_scale[j]);
            col.apply(|v| *v = (*v - shift) / scale);
        }
        x
    }

    fn fit_normalizer(&mut self, inputs: &DMatrix<f64>) {
        let n = inputs.nrows() as f64;
        for (j, col) in inputs.column_iter().enumerate() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            self.input_shift[j] = mean;
            self.input_scale[j] = var.sqrt().max(1e-6);
        }
    }

    fn forward_cached(&self, normalized: DMatrix<f64>) -> ForwardCache {
        let act = self.spec.activation;
        let last = self.layers.len() - 1;
        let mut activations = vec![normalized];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(activations.last().unwrap());
            let a = if l == last { z.clone() } else { z.map(|v| act.apply(v)) };
            pre_activations.push(z);
            activations.push(a);
        }
        ForwardCache {
            activations,
            pre_activations,
        }
    }

    /// Penultimate activations for a batch of rows (N × d_φ).
    pub fn embed_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(inputs)?;
        let act = self.spec.activation;
        let mut x = self.normalize(inputs);
        for layer in &self.layers[..self.layers.len() - 1] {
            x = layer.affine(&x);
            x.apply(|v| *v = act.apply(*v));
        }
        Ok(x)
    }

    /// Penultimate activations of one input.
    pub fn embed(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        let row = DMatrix::from_row_slice(1, input.len(), input.as_slice());
        Ok(self.embed_batch(&row)?.row(0).transpose())
    }

    /// Network head output for a batch of rows (N × d_out).
    pub fn predict_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let features = self.embed_batch(inputs)?;
        Ok(self.layers.last().unwrap().affine(&features))
    }

    pub fn predict(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        let row = DMatrix::from_row_slice(1, input.len(), input.as_slice());
        Ok(self.predict_batch(&row)?.row(0).transpose())
    }

    pub fn mse(&self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
        let pred = self.predict_batch(inputs)?;
        if pred.shape() != targets.shape() {
            return Err(Error::DimensionMismatch("prediction and target shapes differ".into()));
        }
        Ok((pred - targets).norm_squared() / targets.len().max(1) as f64)
    }

    /// Backpropagates `output_grad = ∂L/∂ŷ` and returns per-layer `(∂L/∂W, ∂L/∂b)`.
    fn backward(&self, cache: &ForwardCache, output_grad: DMatrix<f64>) -> Vec<(DMatrix<f64>, DVector<f64>)> {
        let act = self.spec.activation;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad;
        for l in (0..self.layers.len()).rev() {
            let input = &cache.activations[l];
            let grad_w = input.tr_mul(&delta);
            let grad_b = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push((grad_w, grad_b));
            if l > 0 {
                let mut upstream = &delta * self.layers[l].weights.transpose();
                upstream.zip_apply(&cache.pre_activations[l - 1], |u, z| *u *= act.derivative(z));
                delta = upstream;
            }
        }
        grads.reverse();
        grads
    }

    /// Gradient of `½‖ŷ(x) − y‖²` with respect to all parameters, flattened
    /// layer by layer (weights column-major, then bias).
    pub fn parameter_gradient(&self, input: &DVector<f64>, target: &DVector<f64>) -> Result<Vec<f64>> {
        let x = DMatrix::from_row_slice(1, input.len(), input.as_slice());
        self.check_inputs(&x)?;
        let cache = self.forward_cached(self.normalize(&x));
        let out = cache.activations.last().unwrap();
        if out.ncols() != target.len() {
            return Err(Error::DimensionMismatch("target length".into()));
        }
        let residual = DMatrix::from_fn(1, target.len(), |_, j| out[(0, j)] - target[j]);
        let grads = self.backward(&cache, residual);
        Ok(grads
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect())
    }

    fn half_squared_loss(&self, input: &DVector<f64>, target: &DVector<f64>) -> f64 {
        let out = self.predict(input).expect("dimensions checked by caller");
        0.5 * (out - target).norm_squared()
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                return &mut layer.weights.as_mut_slice()[index];
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                return &mut layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Compares backprop gradients of `½‖ŷ − y‖²` against central finite
    /// differences with step `1e-5`.
    pub fn gradient_check(&self, input: &DVector<f64>, target: &DVector<f64>) -> Result<GradientCheck> {
        const STEP: f64 = 1e-5;
        const FLOOR: f64 = 1e-6;
        let analytic = self.parameter_gradient(input, target)?;
        let mut probe = self.clone();
        let mut max_relative_error = 0.0f64;
        for (i, &a) in analytic.iter().enumerate() {
            let original = *probe.param_mut(i);
            *probe.param_mut(i) = original + STEP;
            let plus = probe.half_squared_loss(input, target);
            *probe.param_mut(i) = original - STEP;
            let minus = probe.half_squared_loss(input, target);
            *probe.param_mut(i) = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            let denom = a.abs().max(numeric.abs()).max(FLOOR);
            max_relative_error = max_relative_error.max((a - numeric).abs() / denom);
        }
        let analytic_norm = analytic.iter().map(|g| g * g).sum::<f64>().sqrt();
        Ok(GradientCheck {
            max_relative_error,
            analytic_norm,
            n_params: analytic.len(),
        })
    }

    /// Fits the network on `(inputs, targets)`, warm-starting from the current
    /// parameters. An empty dataset returns the network unchanged.
    pub fn train(
        &self,
        inputs: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        rng: &mut StreamRng,
    ) -> std::result::Result<Mlp, TrainError> {
        self.train_with_report(inputs, targets, rng).map(|r| r.net)
    }

    pub fn train_with_report(
        &self,
        inputs: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        rng: &mut StreamRng,
    ) -> std::result::Result<TrainReport, TrainError> {
        let fail = |message: String, net: &Mlp| TrainError {
            message,
            last_finite: Box::new(net.clone()),
        };
        if inputs.nrows() == 0 {
            return Ok(TrainReport {
                net: self.clone(),
                epoch_losses: Vec::new(),
                steps: 0,
            });
        }
        if inputs.ncols() != self.spec.input_dim
            || targets.ncols() != self.spec.output_dim
            || targets.nrows() != inputs.nrows()
        {
            return Err(fail("input/target shapes do not match the network".into(), self));
        }

        let mut net = self.clone();
        if net.spec.normalize_inputs {
            net.fit_normalizer(inputs);
        }
        let x = net.normalize(inputs);
        let n = x.nrows();
        let batch = net.spec.batch_size.min(n);
        let mut adam = Adam::new(&net.layers, net.spec.learning_rate);
        let mut order: Vec<usize> = (0..n).collect();
        let mut last_finite = net.clone();
        let mut epoch_losses = Vec::with_capacity(net.spec.epochs);
        let mut steps = 0;

        'epochs: for epoch in 0..net.spec.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(batch) {
                if steps >= net.spec.max_steps {
                    break 'epochs;
                }
                let xb = x.select_rows(chunk);
                let yb = targets.select_rows(chunk);
                let cache = net.forward_cached(xb);
                let out = cache.activations.last().unwrap();
                let scale = 2.0 / (chunk.len() * net.spec.output_dim) as f64;
                let residual = (out - &yb) * scale;
                if residual.iter().any(|v| !v.is_finite()) {
                    return Err(fail(format!("non-finite loss in epoch {epoch}"), &last_finite));
                }
                let grads = net.backward(&cache, residual);
                adam.step(&mut net.layers, &grads);
                steps += 1;
            }
            let loss = {
                let out = net.forward_cached(x.clone()).activations.pop().unwrap();
                (out - targets).norm_squared() / targets.len() as f64
            };
            if !loss.is_finite() || !net.is_finite() {
                return Err(fail(format!("non-finite loss after epoch {epoch}"), &last_finite));
            }
            epoch_losses.push(loss);
            last_finite = net.clone();
        }
        if !net.is_finite() {
            return Err(fail("non-finite parameters".into(), &last_finite));
        }
        Ok(TrainReport {
            net,
            epoch_losses,
            steps,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub analytic_norm: f64,
    pub n_params: usize,
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<(DMatrix<f64>, DVector<f64>)>,
    v: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[Layer], lr: f64) -> Self {
        let zeros: Vec<_> = layers
            .iter()
            .map(|l| {
                (
                    DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    DVector::zeros(l.bias.len()),
                )
            })
            .collect();
        Self {
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &[(DMatrix<f64>, DVector<f64>)]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        };
        for (l, layer) in layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            update(layer.weights.as_mut_slice(), gw.as_slice(), mw.as_mut_slice(), vw.as_mut_slice());
            update(layer.bias.as_mut_slice(), gb.as_slice(), mb.as_mut_slice(), vb.as_mut_slice());
        }
    }
}

/// Regression design used by the posteriors.
///
/// `Network` designs are the penultimate activations with a constant 1
/// appended, so the linear head can carry an intercept. `Identity` passes the
/// raw state-action vector through unchanged (the linear-MDP setting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    Identity { dim: usize },
    Network(Mlp),
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Network(net) => net.spec().input_dim,
        }
    }

    pub fn design_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Network(net) => net.feature_dim() + 1,
        }
    }

    pub fn design_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            FeatureMap::Identity { dim } => {
                if inputs.ncols() != *dim {
                    return Err(Error::DimensionMismatch(format!(
                        "identity features expect {dim} inputs, got {}",
                        inputs.ncols()
                    )));
                }
                Ok(inputs.clone())
            }
            FeatureMap::Network(net) => {
                let phi = net.embed_batch(inputs)?;
                let n = phi.ncols();
                Ok(phi.insert_column(n, 1.0))
            }
        }
    }

    pub fn design(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        let row = DMatrix::from_row_slice(1, input.len(), input.as_slice());
        Ok(self.design_batch(&row)?.row(0).transpose())
    }

    pub fn network(&self) -> Option<&Mlp> {
        match self {
            FeatureMap::Network(net) => Some(net),
            FeatureMap::Identity { .. } => None,
        }
    }
}

/// Recomputes both feature caches of `dataset` under the given maps.
///
/// Any posterior built on the previous caches is stale afterwards and must be
/// rebuilt from scratch on the refreshed features.
pub fn refresh_features(dataset: &Dataset, transition_map: &FeatureMap, reward_map: &FeatureMap) -> Result<Dataset> {
    let inputs = dataset.inputs();
    let transition = transition_map.design_batch(&inputs)?;
    let reward = reward_map.design_batch(&inputs)?;
    let mut refreshed = dataset.clone();
    refreshed.set_features(transition, reward)?;
    Ok(refreshed)
}
