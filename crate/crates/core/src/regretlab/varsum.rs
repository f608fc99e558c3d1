//! Sum of per-episode maximal posterior variances against the information-gain bound.
//!
//! Each episode offers a handful of feature points. The point with the largest
//! predictive variance under the current posterior (the kmax point) is
//! recorded as `σ'²_k` and is the only point the posterior then absorbs.
//! With `s² = σ_f⁻² σ'²` and `C₁` the largest prior variance, every realized
//! value satisfies `s² ≤ C₂ log(1 + s²)` for `C₂ = σ_f⁻²C₁ / log(1 + σ_f⁻²C₁)`,
//! which bounds `Σ σ'²_k` by `σ_f² C₂ Σ log(1 + s²_k)`, i.e. by the
//! information gain.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bayes::{GaussianLinearPosterior, GaussianLinearPrior};
use crate::error::{Error, Result};
use crate::rng::{derived, StreamRng};

/// Relative slack for the pointwise inequality, which is tight at `s² = 0` and `s² = σ_f⁻²C₁`.
const POINTWISE_SLACK: f64 = 1e-12;

pub fn c2_constant(c1: f64, noise_variance: f64) -> f64 {
    let s_max = c1 / noise_variance;
    s_max / s_max.ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSumReport {
    pub dim: usize,
    pub noise_variance: f64,
    pub c1: f64,
    pub c2: f64,
    /// `σ'²_k` per episode.
    pub max_variances: Vec<f64>,
    /// Prefix sums of `max_variances`.
    pub cumulative: Vec<f64>,
    /// Prefix sums of `σ_f² C₂ log(1 + s²_k)`.
    pub bound_cumulative: Vec<f64>,
    /// Prefix sums of `½ log(1 + s²_k)`.
    pub information_gain: Vec<f64>,
    pub pointwise_violations: usize,
}

impl VarianceSumReport {
    pub fn episodes(&self) -> usize {
        self.max_variances.len()
    }

    /// `Σ_{k ≤ n} σ'²_k / (d log n)`.
    pub fn normalized_sum(&self, n: usize) -> f64 {
        self.cumulative[n - 1] / (self.dim as f64 * (n as f64).ln())
    }

    pub fn bound_holds(&self) -> bool {
        self.pointwise_violations == 0
            && self
                .cumulative
                .iter()
                .zip(&self.bound_cumulative)
                .all(|(s, b)| *s <= b * (1.0 + POINTWISE_SLACK))
    }
}

/// Runs the kmax recursion over an explicit stream of per-episode candidate sets.
pub fn variance_sum_on_stream<I>(prior: &GaussianLinearPrior, episodes: I) -> Result<VarianceSumReport>
where
    I: IntoIterator<Item = Vec<DVector<f64>>>,
{
    let d = prior.dim();
    let noise = prior.noise_variance();
    let c1 = prior.max_prior_variance();
    let c2 = c2_constant(c1, noise);
    let mut post = GaussianLinearPosterior::from_prior(prior, 1)?;
    let mut report = VarianceSumReport {
        dim: d,
        noise_variance: noise,
        c1,
        c2,
        max_variances: Vec::new(),
        cumulative: Vec::new(),
        bound_cumulative: Vec::new(),
        information_gain: Vec::new(),
        pointwise_violations: 0,
    };
    let (mut sum, mut bound, mut gain) = (0.0, 0.0, 0.0);
    for candidates in episodes {
        if candidates.is_empty() {
            return Err(Error::InvalidParameter("every episode needs at least one point".into()));
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, phi) in candidates.iter().enumerate() {
            let v = post.predictive_variance(phi)?;
            if v > best.1 {
                best = (i, v);
            }
        }
        let var = best.1;
        let s2 = var / noise;
        if s2 > c2 * s2.ln_1p() * (1.0 + POINTWISE_SLACK) {
            report.pointwise_violations += 1;
        }
        sum += var;
        bound += noise * c2 * s2.ln_1p();
        gain += 0.5 * s2.ln_1p();
        report.max_variances.push(var);
        report.cumulative.push(sum);
        report.bound_cumulative.push(bound);
        report.information_gain.push(gain);

        let phi = &candidates[best.0];
        let row = DMatrix::from_row_slice(1, d, phi.as_slice());
        // The target value does not affect variances.
        post = post.sequential_update(&row, &DMatrix::zeros(1, 1))?;
    }
    Ok(report)
}

/// Uniform draw from the unit ball in `d` dimensions.
pub fn unit_ball_point(d: usize, rng: &mut StreamRng) -> DVector<f64> {
    let dir: DVector<f64> = DVector::from_fn(d, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
    let norm = dir.norm();
    let u: f64 = rand::Rng::random(rng);
    dir * (u.powf(1.0 / d as f64) / norm)
}

/// `n` episodes of `points_per_episode` unit-ball features under an
/// identity prior.
pub fn variance_sum_experiment(
    dim: usize,
    n: usize,
    points_per_episode: usize,
    noise_variance: f64,
    seed: u64,
) -> Result<VarianceSumReport> {
    let prior = GaussianLinearPrior::isotropic(dim, 1.0, noise_variance)?;
    let mut rng = derived(seed, &[dim as u64]);
    let episodes: Vec<Vec<DVector<f64>>> = (0..n)
        .map(|_| (0..points_per_episode).map(|_| unit_ball_point(dim, &mut rng)).collect())
        .collect();
    variance_sum_on_stream(&prior, episodes)
}
