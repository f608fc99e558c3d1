//! Finite-horizon dynamic programming on a state × action grid.
//!
//! Values live on a regular grid over a state box and are read between
//! nodes by multilinear interpolation. The expectation over Gaussian
//! transition noise uses a tensor Gauss–Hermite rule. Policies are read at
//! the nearest grid node.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::gauss_hermite;
use crate::envs::{Environment, SyntheticLinearMdp};
use crate::error::{Error, Result};

/// A model the grid oracle can solve: `d_s ≤ 2`, scalar action, additive
/// Gaussian transition noise with the same std in every dimension.
pub trait DpModel: Sync {
    fn state_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn action_bounds(&self) -> (f64, f64);
    fn transition_noise_std(&self) -> f64;
    fn mean_next(&self, state: &[f64], action: f64, out: &mut [f64]);
    fn mean_reward(&self, state: &[f64], action: f64) -> f64;
}

impl DpModel for SyntheticLinearMdp {
    fn state_dim(&self) -> usize {
        self.spec().state_dim
    }

    fn horizon(&self) -> usize {
        self.spec().horizon
    }

    fn action_bounds(&self) -> (f64, f64) {
        (self.spec().action_low[0], self.spec().action_high[0])
    }

    fn transition_noise_std(&self) -> f64 {
        self.spec().sigma_f
    }

    fn mean_next(&self, state: &[f64], action: f64, out: &mut [f64]) {
        self.mean_next_slice(state, &[action], out);
    }

    fn mean_reward(&self, state: &[f64], action: f64) -> f64 {
        self.mean_reward_slice(state, &[action])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub state_low: Vec<f64>,
    pub state_high: Vec<f64>,
    /// Nodes per state dimension.
    pub state_points: Vec<usize>,
    pub action_points: usize,
    pub hermite_nodes: usize,
}

impl GridSpec {
    /// The cube `[-bound, bound]^d`.
    pub fn symmetric(dim: usize, bound: f64, state_points: usize, action_points: usize, hermite_nodes: usize) -> Self {
        Self {
            state_low: vec![-bound; dim],
            state_high: vec![bound; dim],
            state_points: vec![state_points; dim],
            action_points,
            hermite_nodes,
        }
    }

    pub fn dim(&self) -> usize {
        self.state_points.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d > 2 {
            return Err(Error::InvalidParameter("the grid oracle supports 1 or 2 state dimensions".into()));
        }
        if self.state_low.len() != d || self.state_high.len() != d {
            return Err(Error::DimensionMismatch("grid bounds do not match the grid dimension".into()));
        }
        if self.state_low.iter().zip(&self.state_high).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidParameter("grid lower bounds must be below upper bounds".into()));
        }
        if self.state_points.iter().any(|&n| n < 2) || self.action_points == 0 || self.hermite_nodes == 0 {
            return Err(Error::InvalidParameter("grid needs at least 2 state nodes per axis, 1 action and 1 quadrature node".into()));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.state_points.iter().product()
    }

    fn spacing(&self, axis: usize) -> f64 {
        (self.state_high[axis] - self.state_low[axis]) / (self.state_points[axis] - 1) as f64
    }

    /// Coordinates of flat node `index` (axis 0 varies fastest).
    pub fn node(&self, mut index: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|axis| {
                let n = self.state_points[axis];
                let i = index % n;
                index /= n;
                self.state_low[axis] + i as f64 * self.spacing(axis)
            })
            .collect()
    }

    /// Flat index of the nearest node, and whether `state` was outside the box.
    pub fn nearest(&self, state: &[f64]) -> (usize, bool) {
        let mut index = 0;
        let mut stride = 1;
        let mut outside = false;
        for axis in 0..self.dim() {
            let n = self.state_points[axis];
            let u = (state[axis] - self.state_low[axis]) / self.spacing(axis);
            outside |= state[axis] < self.state_low[axis] || state[axis] > self.state_high[axis];
            let i = u.round().clamp(0.0, (n - 1) as f64) as usize;
            index += i * stride;
            stride *= n;
        }
        (index, outside)
    }

    /// Multilinear interpolation of node `values`, clamping into the box.
    /// The flag reports a clamp.
    pub fn interpolate(&self, values: &[f64], state: &[f64]) -> (f64, bool) {
        let d = self.dim();
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        let mut outside = false;
        for axis in 0..d {
            let n = self.state_points[axis];
            let x = state[axis];
            outside |= x < self.state_low[axis] || x > self.state_high[axis];
            let u = ((x - self.state_low[axis]) / self.spacing(axis)).clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n - 2);
            base[axis] = i;
            frac[axis] = u - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut index = 0;
            let mut stride = 1;
            for axis in 0..d {
                let bit = (corner >> axis) & 1;
                weight *= if bit == 1 { frac[axis] } else { 1.0 - frac[axis] };
                index += (base[axis] + bit) * stride;
                stride *= self.state_points[axis];
            }
            if weight != 0.0 {
                acc += weight * values[index];
            }
        }
        (acc, outside)
    }
}

/// Optimal values and greedy policy of a model on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSolution {
    pub grid: GridSpec,
    pub actions: Vec<f64>,
    /// `values[t]` is `V_t` on the grid for `t = 0..=H`; `values[H] ≡ 0`.
    pub values: Vec<Vec<f64>>,
    /// `policy[t][node]` indexes `actions`.
    pub policy: Vec<Vec<usize>>,
    /// Quadrature successors that fell outside the grid during the backup.
    pub boundary_clamps: usize,
}

impl DpSolution {
    pub fn horizon(&self) -> usize {
        self.policy.len()
    }

    /// Interpolated `V_t(state)`.
    pub fn value_at(&self, t: usize, state: &[f64]) -> f64 {
        self.grid.interpolate(&self.values[t], state).0
    }

    /// Greedy action at the nearest node, and whether `state` was off the grid.
    pub fn action(&self, t: usize, state: &[f64]) -> (f64, bool) {
        let (node, outside) = self.grid.nearest(state);
        (self.actions[self.policy[t][node]], outside)
    }

    pub fn same_policy(&self, other: &DpSolution) -> bool {
        self.grid == other.grid && self.actions == other.actions && self.policy == other.policy
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Backward induction `V_t(s) = max_a r̄(s, a) + E[V_{t+1}(f(s, a) + ε)]`.
///
/// Ties go to the lowest action index.
pub fn grid_dp_oracle<M: DpModel + ?Sized>(model: &M, grid: &GridSpec) -> Result<DpSolution> {
    grid.validate()?;
    let d = grid.dim();
    if model.state_dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "model has {} state dimensions, grid has {d}",
            model.state_dim()
        )));
    }
    let horizon = model.horizon();
    let (a_lo, a_hi) = model.action_bounds();
    let actions = linspace(a_lo, a_hi, grid.action_points);
    let sigma = model.transition_noise_std();

    // Tensor rule over the noise dimensions; a point mass when the model is noiseless.
    let (z, w) = if sigma > 0.0 { gauss_hermite(grid.hermite_nodes) } else { (vec![0.0], vec![1.0]) };
    let mut offsets: Vec<([f64; 2], f64)> = Vec::new();
    if d == 1 {
        for (zi, wi) in z.iter().zip(&w) {
            offsets.push(([sigma * zi, 0.0], *wi));
        }
    } else {
        for (zi, wi) in z.iter().zip(&w) {
            for (zj, wj) in z.iter().zip(&w) {
                offsets.push(([sigma * zi, sigma * zj], wi * wj));
            }
        }
    }

    let n_states = grid.n_states();
    let nodes: Vec<Vec<f64>> = (0..n_states).map(|i| grid.node(i)).collect();
    let mut values = vec![vec![0.0; n_states]; horizon + 1];
    let mut policy = vec![vec![0usize; n_states]; horizon];
    let mut boundary_clamps = 0;

    for t in (0..horizon).rev() {
        let next = &values[t + 1];
        let backed: Vec<(f64, usize, usize)> = nodes
            .par_iter()
            .map(|s| {
                let mut best = (f64::NEG_INFINITY, 0usize);
                let mut clamps = 0;
                let mut mean = [0.0; 2];
                let mut succ = [0.0; 2];
                for (ai, &a) in actions.iter().enumerate() {
                    model.mean_next(s, a, &mut mean[..d]);
                    let mut expectation = 0.0;
                    for (off, wt) in &offsets {
                        for k in 0..d {
                            succ[k] = mean[k] + off[k];
                        }
                        let (v, outside) = grid.interpolate(next, &succ[..d]);
                        clamps += outside as usize;
                        expectation += wt * v;
                    }
                    let q = model.mean_reward(s, a) + expectation;
                    if q > best.0 {
                        best = (q, ai);
                    }
                }
                (best.0, best.1, clamps)
            })
            .collect();
        for (i, (v, a, c)) in backed.into_iter().enumerate() {
            values[t][i] = v;
            policy[t][i] = a;
            boundary_clamps += c;
        }
    }
    if values[0].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("grid dynamic programming values".into()));
    }
    Ok(DpSolution {
        grid: grid.clone(),
        actions,
        values,
        policy,
        boundary_clamps,
    })
}
