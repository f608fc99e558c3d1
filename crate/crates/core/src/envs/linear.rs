use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Environment, MdpSpec};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Largest spectral radius accepted for the state block of the transition matrix.
pub const SPECTRAL_CAP: f64 = 0.95;

/// `s' = W_f [s; a] + ε_f`, `r = clip(w_rᵀ [s; a], ±R_max) + ε_r`, start at a fixed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLinearMdp {
    spec: MdpSpec,
    transition: DMatrix<f64>,
    reward: DVector<f64>,
    initial_state: DVector<f64>,
}

impl SyntheticLinearMdp {
    pub fn new(
        transition: DMatrix<f64>,
        reward: DVector<f64>,
        spec: MdpSpec,
        initial_state: DVector<f64>,
    ) -> Result<Self> {
        spec.validate()?;
        let d = spec.state_dim + spec.action_dim;
        if transition.nrows() != spec.state_dim || transition.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "transition matrix must be {}x{d}, got {}x{}",
                spec.state_dim,
                transition.nrows(),
                transition.ncols()
            )));
        }
        if reward.len() != d || initial_state.len() != spec.state_dim {
            return Err(Error::DimensionMismatch("reward weights or initial state".into()));
        }
        let radius = state_block_spectral_radius(&transition);
        if radius > SPECTRAL_CAP + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "state block spectral radius {radius} exceeds {SPECTRAL_CAP}"
            )));
        }
        Ok(Self {
            spec,
            transition,
            reward,
            initial_state,
        })
    }

    /// One-dimensional `s' = a_s s + b a` with reward `s + a`, `H = 10`, unit action box.
    pub fn scalar(state_coef: f64, action_coef: f64, noise_std: f64) -> Self {
        Self::new(
            DMatrix::from_row_slice(1, 2, &[state_coef, action_coef]),
            DVector::from_vec(vec![1.0, 1.0]),
            MdpSpec {
                state_dim: 1,
                action_dim: 1,
                horizon: 10,
                sigma_r: noise_std,
                sigma_f: noise_std,
                r_max: 10.0,
                action_low: vec![-1.0],
                action_high: vec![1.0],
            },
            DVector::zeros(1),
        )
        .expect("scalar linear MDP parameters are valid")
    }

    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward_weights(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial_state
    }

    pub fn set_horizon(&mut self, horizon: usize) {
        self.spec.horizon = horizon;
    }

    pub(crate) fn mean_next_slice(&self, state: &[f64], action: &[f64], out: &mut [f64]) {
        let ds = self.spec.state_dim;
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, s) in state.iter().enumerate() {
                acc += self.transition[(i, j)] * s;
            }
            for (j, a) in action.iter().enumerate() {
                acc += self.transition[(i, ds + j)] * a;
            }
            *o = acc;
        }
    }

    pub(crate) fn mean_reward_slice(&self, state: &[f64], action: &[f64]) -> f64 {
        let ds = self.spec.state_dim;
        let raw: f64 = state.iter().enumerate().map(|(j, s)| self.reward[j] * s).sum::<f64>()
            + action.iter().enumerate().map(|(j, a)| self.reward[ds + j] * a).sum::<f64>();
        raw.clamp(-self.spec.r_max, self.spec.r_max)
    }
}

pub fn state_block_spectral_radius(transition: &DMatrix<f64>) -> f64 {
    let ds = transition.nrows();
    let block = transition.columns(0, ds).into_owned();
    block
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

impl Environment for SyntheticLinearMdp {
    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&self, _rng: &mut StreamRng) -> DVector<f64> {
        self.initial_state.clone()
    }

    fn oracle_mean_dynamics(&self, state: &DVector<f64>, action: &DVector<f64>) -> (DVector<f64>, f64) {
        let mut next = DVector::zeros(self.spec.state_dim);
        self.mean_next_slice(state.as_slice(), action.as_slice(), next.as_mut_slice());
        (next, self.mean_reward_slice(state.as_slice(), action.as_slice()))
    }
}

/// Config-file form of [`SyntheticLinearMdp`]. Omitted matrices default to
/// `0.9 I` on the state block, `0.5` on the leading action diagonal and unit
/// reward weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearMdpConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    #[serde(default = "default_action_bound")]
    pub action_bound: f64,
    /// Row-major, `state_dim` rows of `state_dim + action_dim` entries.
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub reward: Option<Vec<f64>>,
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
}

fn default_noise() -> f64 {
    0.1
}

fn default_r_max() -> f64 {
    10.0
}

fn default_action_bound() -> f64 {
    1.0
}

impl LinearMdpConfig {
    pub fn build(&self) -> Result<SyntheticLinearMdp> {
        let (ds, da) = (self.state_dim, self.action_dim);
        let transition = match &self.transition {
            Some(rows) => {
                if rows.len() != ds || rows.iter().any(|r| r.len() != ds + da) {
                    return Err(Error::DimensionMismatch("transition rows".into()));
                }
                DMatrix::from_fn(ds, ds + da, |i, j| rows[i][j])
            }
            None => DMatrix::from_fn(ds, ds + da, |i, j| {
                if j < ds {
                    if i == j { 0.9 } else { 0.0 }
                } else if j - ds == i {
                    0.5
                } else {
                    0.0
                }
            }),
        };
        let reward = match &self.reward {
            Some(w) => DVector::from_vec(w.clone()),
            None => DVector::from_element(ds + da, 1.0),
        };
        let initial = match &self.initial_state {
            Some(s) => DVector::from_vec(s.clone()),
            None => DVector::zeros(ds),
        };
        SyntheticLinearMdp::new(
            transition,
            reward,
            MdpSpec {
                state_dim: ds,
                action_dim: da,
                horizon: self.horizon,
                sigma_r: self.noise_std,
                sigma_f: self.noise_std,
                r_max: self.r_max,
                action_low: vec![-self.action_bound; da],
                action_high: vec![self.action_bound; da],
            },
            initial,
        )
    }
}
