//! Monte-Carlo coverage of the posterior concentration event.
//!
//! For two independent draws `f^k`, `f*` from the same posterior, the event
//! `‖f^k(h) − f*(h)‖₂ ≤ 2√(2 d_s σ²(h) log(2 d_s / δ))` should hold with
//! probability at least `1 − 2δ`, where `σ²(h) = φᵀA⁻¹φ`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::GaussianLinearPosterior;
use crate::error::{Error, Result};
use crate::rng::derived;

const TRIALS_PER_CHUNK: usize = 1000;

pub fn concentration_radius(state_dim: usize, variance: f64, delta: f64) -> f64 {
    let d = state_dim as f64;
    2.0 * (2.0 * d * variance * (2.0 * d / delta).ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub delta: f64,
    pub state_dim: usize,
    pub n_trials: usize,
    pub covered: usize,
    pub coverage: f64,
    /// Binomial standard error at the nominal level `1 − 2δ`.
    pub std_error: f64,
    /// `1 − 2δ − 3 · std_error`.
    pub threshold: f64,
    pub holds: bool,
}

/// Draws `n_trials` independent pairs of weight samples; trial `i` queries
/// `queries[i % queries.len()]`.
pub fn concentration_check(
    posterior: &GaussianLinearPosterior,
    queries: &[DVector<f64>],
    delta: f64,
    n_trials: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter("delta must lie in (0, 1)".into()));
    }
    if queries.is_empty() || n_trials == 0 {
        return Err(Error::InvalidParameter("need at least one query and one trial".into()));
    }
    let d_s = posterior.output_dim();
    let radii: Vec<f64> = queries
        .iter()
        .map(|q| Ok(concentration_radius(d_s, posterior.predictive_variance(q)?, delta)))
        .collect::<Result<_>>()?;

    let n_chunks = n_trials.div_ceil(TRIALS_PER_CHUNK);
    let covered: usize = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = derived(seed, &[c as u64]);
            let start = c * TRIALS_PER_CHUNK;
            let end = (start + TRIALS_PER_CHUNK).min(n_trials);
            (start..end)
                .filter(|&i| {
                    let q = i % queries.len();
                    let wk = posterior.sample_weights(&mut rng).weights;
                    let ws = posterior.sample_weights(&mut rng).weights;
                    (wk - ws).tr_mul(&queries[q]).norm() <= radii[q]
                })
                .count()
        })
        .sum();

    let n = n_trials as f64;
    let nominal = 1.0 - 2.0 * delta;
    let std_error = (nominal.max(0.0) * (1.0 - nominal.max(0.0)) / n).sqrt();
    let threshold = nominal - 3.0 * std_error;
    let coverage = covered as f64 / n;
    Ok(ConcentrationReport {
        delta,
        state_dim: d_s,
        n_trials,
        covered,
        coverage,
        std_error,
        threshold,
        holds: coverage >= threshold,
    })
}
