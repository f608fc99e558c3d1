//! Cross-entropy-method model-predictive control with noisy particle rollouts.
//!
//! Every random draw comes from a stream derived from the planning seed and
//! a fixed key path, `(sample, iteration, candidate)` for action proposals and
//! `(noise, iteration, candidate, particle)` for transition noise. Candidates
//! are scored in fixed-size chunks, so scores do not depend on how many
//! worker threads run the chunks.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TransitionTarget;
use crate::envs::{Environment, MdpSpec};
use crate::error::{Error, Result};
use crate::featnet::FeatureMap;
use crate::rng::derived;

const SAMPLE_KEY: u64 = 0x5a;
const NOISE_KEY: u64 = 0x9e;
/// Candidate key used for noise when all candidates share realizations.
const SHARED_CANDIDATE: u64 = u64::MAX;
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CemConfig {
    pub popsize: usize,
    pub n_elites: usize,
    pub horizon: usize,
    pub max_iter: usize,
    pub n_particles: usize,
    /// Initial proposal std per action dimension; a quarter of the box width when absent.
    #[serde(default)]
    pub init_std: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Score all candidates of one iteration against the same noise draws.
    #[serde(default = "default_crn")]
    pub common_random_numbers: bool,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_crn() -> bool {
    true
}

impl Default for CemConfig {
    fn default() -> Self {
        Self::cartpole()
    }
}

impl CemConfig {
    pub fn cartpole() -> Self {
        Self {
            popsize: 500,
            n_elites: 50,
            horizon: 30,
            max_iter: 5,
            n_particles: 20,
            init_std: None,
            alpha: default_alpha(),
            common_random_numbers: true,
        }
    }

    pub fn pendulum() -> Self {
        Self {
            popsize: 100,
            n_elites: 5,
            horizon: 20,
            ..Self::cartpole()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.popsize == 0 || self.n_elites == 0 || self.n_elites > self.popsize {
            return Err(Error::InvalidParameter("need 1 <= n_elites <= popsize".into()));
        }
        if self.horizon == 0 || self.max_iter == 0 || self.n_particles == 0 {
            return Err(Error::InvalidParameter("horizon, max_iter and n_particles must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter("alpha must lie in [0, 1]".into()));
        }
        if let Some(s) = self.init_std {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter("init_std must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Mean one-step model used for planning. Rows of `states` and `actions` are
/// paired; the result is the mean next state per row and the mean reward.
pub trait PlanningModel: Sync {
    fn state_dim(&self) -> usize;

    fn predict(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)>;

    /// Std of the additive Gaussian transition noise applied to each particle.
    fn transition_noise_std(&self) -> f64;

    fn reward_bound(&self) -> f64;
}

/// The sampled MDP of one episode: posterior weight draws on top of the
/// current feature maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledModel {
    pub transition_map: FeatureMap,
    pub reward_map: FeatureMap,
    /// design_dim × d_s.
    pub transition_weights: DMatrix<f64>,
    /// design_dim × 1.
    pub reward_weights: DMatrix<f64>,
    pub target: TransitionTarget,
    pub sigma_f: f64,
    pub sigma_r: f64,
    pub r_max: f64,
}

impl SampledModel {
    pub fn validate(&self) -> Result<()> {
        if self.transition_weights.nrows() != self.transition_map.design_dim()
            || self.reward_weights.nrows() != self.reward_map.design_dim()
            || self.reward_weights.ncols() != 1
        {
            return Err(Error::DimensionMismatch("sampled weights do not match feature maps".into()));
        }
        if self.transition_map.input_dim() != self.reward_map.input_dim() {
            return Err(Error::DimensionMismatch("feature maps disagree on input size".into()));
        }
        let finite = self
            .transition_weights
            .iter()
            .chain(self.reward_weights.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("sampled weights".into()));
        }
        Ok(())
    }
}

impl PlanningModel for SampledModel {
    fn state_dim(&self) -> usize {
        self.transition_weights.ncols()
    }

    fn predict(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let inputs = hstack(states, actions);
        let mut next = self.transition_map.design_batch(&inputs)? * &self.transition_weights;
        if self.target == TransitionTarget::Delta {
            next += states;
        }
        let reward = self.reward_map.design_batch(&inputs)? * &self.reward_weights;
        Ok((next, reward.column(0).into_owned()))
    }

    fn transition_noise_std(&self) -> f64 {
        self.sigma_f
    }

    fn reward_bound(&self) -> f64 {
        self.r_max
    }
}

/// Plans on the true mean dynamics of an environment with its true noise.
pub struct OracleModel<'a, E: Environment> {
    pub env: &'a E,
}

impl<E: Environment> PlanningModel for OracleModel<'_, E> {
    fn state_dim(&self) -> usize {
        self.env.spec().state_dim
    }

    fn predict(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let ds = self.state_dim();
        let mut next = DMatrix::zeros(states.nrows(), ds);
        let mut reward = DVector::zeros(states.nrows());
        for r in 0..states.nrows() {
            let (s, r_mean) = self
                .env
                .oracle_mean_dynamics(&states.row(r).transpose(), &actions.row(r).transpose());
            next.set_row(r, &s.transpose());
            reward[r] = r_mean;
        }
        Ok((next, reward))
    }

    fn transition_noise_std(&self) -> f64 {
        self.env.spec().sigma_f
    }

    fn reward_bound(&self) -> f64 {
        self.env.spec().r_max
    }
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `n_particles × (τ · d_s)` standard-normal draws; row `p` is particle `p`.
fn noise_block(seed: u64, iteration: u64, candidate: u64, n_particles: usize, width: usize) -> DMatrix<f64> {
    let mut block = DMatrix::zeros(n_particles, width);
    for p in 0..n_particles {
        let mut rng = derived(seed, &[NOISE_KEY, iteration, candidate, p as u64]);
        for j in 0..width {
            block[(p, j)] = StandardNormal.sample(&mut rng);
        }
    }
    block
}

#[derive(Debug, Clone, Copy)]
struct Score {
    value: f64,
    nonfinite: usize,
}

/// Scores a chunk of candidates starting at global index `first`.
#[allow(clippy::too_many_arguments)]
fn score_chunk<M: PlanningModel + ?Sized>(
    state: &DVector<f64>,
    chunk: &[DMatrix<f64>],
    first: usize,
    model: &M,
    n_particles: usize,
    seed: u64,
    iteration: u64,
    shared: Option<&DMatrix<f64>>,
    steps: usize,
) -> Result<Vec<Score>> {
    let tau = chunk[0].nrows().min(steps);
    let da = chunk[0].ncols();
    let ds = model.state_dim();
    let sigma = model.transition_noise_std();
    let penalty = -(tau as f64) * model.reward_bound();
    let rows = chunk.len() * n_particles;

    let noise: Vec<Option<Cow<DMatrix<f64>>>> = (0..chunk.len())
        .map(|c| {
            if sigma == 0.0 {
                None
            } else if let Some(block) = shared {
                Some(Cow::Borrowed(block))
            } else {
                let key = (first + c) as u64;
                Some(Cow::Owned(noise_block(seed, iteration, key, n_particles, tau * ds)))
            }
        })
        .collect();

    let mut states = DMatrix::zeros(rows, ds);
    for r in 0..rows {
        states.set_row(r, &state.transpose());
    }
    let mut returns = vec![0.0; rows];
    let mut dead = vec![false; rows];
    let mut actions = DMatrix::zeros(rows, da);
    for t in 0..tau {
        for (c, cand) in chunk.iter().enumerate() {
            for p in 0..n_particles {
                actions.set_row(c * n_particles + p, &cand.row(t));
            }
        }
        let (mut next, reward) = model.predict(&states, &actions)?;
        for r in 0..rows {
            if dead[r] {
                continue;
            }
            let (c, p) = (r / n_particles, r % n_particles);
            if let Some(block) = &noise[c] {
                for i in 0..ds {
                    next[(r, i)] += sigma * block[(p, t * ds + i)];
                }
            }
            if !reward[r].is_finite() || next.row(r).iter().any(|x| !x.is_finite()) {
                dead[r] = true;
                next.row_mut(r).fill(0.0);
                continue;
            }
            returns[r] += reward[r];
        }
        states = next;
    }

    Ok((0..chunk.len())
        .map(|c| {
            let span = c * n_particles..(c + 1) * n_particles;
            let nonfinite = dead[span.clone()].iter().filter(|&&d| d).count();
            let total: f64 = span.map(|r| if dead[r] { penalty } else { returns[r] }).sum();
            Score {
                value: total / n_particles as f64,
                nonfinite,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceValue {
    pub mean_return: f64,
    /// Standard error of the particle mean.
    pub std_error: f64,
    pub nonfinite_particles: usize,
}

/// Monte-Carlo estimate of the expected τ-step return of a fixed action
/// sequence (τ × d_a, clamped to the box) from `state`.
///
/// Particles follow the model mean plus transition noise. Rewards use the
/// mean head. A particle whose state or reward turns non-finite scores
/// `−τ · R_max` and is counted in `nonfinite_particles`.
pub fn evaluate_sequence<M: PlanningModel + ?Sized>(
    state: &DVector<f64>,
    actions: &DMatrix<f64>,
    spec: &MdpSpec,
    model: &M,
    n_particles: usize,
    seed: u64,
) -> Result<SequenceValue> {
    if n_particles == 0 || actions.nrows() == 0 {
        return Err(Error::InvalidParameter("need at least one particle and one step".into()));
    }
    if actions.ncols() != spec.action_dim || state.len() != model.state_dim() {
        return Err(Error::DimensionMismatch("state or action sequence".into()));
    }
    let clamped = clamp_sequence(actions, spec);
    // One candidate per particle keeps per-particle returns separate.
    let single: Vec<DMatrix<f64>> = vec![clamped];
    let shared = noise_block(seed, 0, SHARED_CANDIDATE, n_particles, actions.nrows() * model.state_dim());
    let per_particle: Vec<Score> = (0..n_particles)
        .map(|p| {
            let row = shared.rows(p, 1).into_owned();
            score_chunk(state, &single, 0, model, 1, seed, 0, Some(&row), usize::MAX).map(|s| s[0])
        })
        .collect::<Result<_>>()?;
    let n = n_particles as f64;
    let mean = per_particle.iter().map(|s| s.value).sum::<f64>() / n;
    let var = if n_particles > 1 {
        per_particle.iter().map(|s| (s.value - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(SequenceValue {
        mean_return: mean,
        std_error: (var / n).sqrt(),
        nonfinite_particles: per_particle.iter().map(|s| s.nonfinite).sum(),
    })
}

fn clamp_sequence(actions: &DMatrix<f64>, spec: &MdpSpec) -> DMatrix<f64> {
    DMatrix::from_fn(actions.nrows(), actions.ncols(), |t, j| {
        actions[(t, j)].clamp(spec.action_low[j], spec.action_high[j])
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub action: DVector<f64>,
    /// Mean score of the elites in the last completed iteration.
    pub elite_mean_return: f64,
    /// Best candidate score seen so far, after each iteration.
    pub best_return_trace: Vec<f64>,
    /// Final proposal mean (τ × d_a).
    pub planned_sequence: DMatrix<f64>,
    /// Every candidate of some iteration had only non-finite particles.
    pub degenerate: bool,
    pub nonfinite_particles: usize,
}

/// CEM planner with warm-started proposal means.
#[derive(Debug, Clone)]
pub struct CemPlanner {
    config: CemConfig,
    spec: MdpSpec,
    init_std: Vec<f64>,
    warm: Option<DMatrix<f64>>,
}

impl CemPlanner {
    pub fn new(config: CemConfig, spec: &MdpSpec) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let init_std = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(lo, hi)| config.init_std.unwrap_or((hi - lo) / 4.0))
            .collect();
        Ok(Self {
            config,
            spec: spec.clone(),
            init_std,
            warm: None,
        })
    }

    pub fn config(&self) -> &CemConfig {
        &self.config
    }

    /// Forgets the warm start; call at every episode start.
    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn warm_start(&self) -> Option<&DMatrix<f64>> {
        self.warm.as_ref()
    }

    fn center(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.spec.action_dim,
            self.spec
                .action_low
                .iter()
                .zip(&self.spec.action_high)
                .map(|(lo, hi)| 0.5 * (lo + hi)),
        )
    }

    fn initial_mean(&self) -> DMatrix<f64> {
        match &self.warm {
            Some(m) => m.clone(),
            None => {
                let c = self.center();
                DMatrix::from_fn(self.config.horizon, self.spec.action_dim, |_, j| c[j])
            }
        }
    }

    fn clamp_action(&self, a: DVector<f64>) -> DVector<f64> {
        self.spec.clamp_action(&a).0
    }

    /// Proposal `candidate` of `iteration`: `mean + std ⊙ z`, clamped to the box.
    pub fn sample_candidate(
        &self,
        mean: &DMatrix<f64>,
        std: &DMatrix<f64>,
        seed: u64,
        iteration: usize,
        candidate: usize,
    ) -> DMatrix<f64> {
        let mut rng = derived(seed, &[SAMPLE_KEY, iteration as u64, candidate as u64]);
        let raw = DMatrix::from_fn(mean.nrows(), mean.ncols(), |t, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mean[(t, j)] + std[(t, j)] * z
        });
        clamp_sequence(&raw, &self.spec)
    }

    /// Runs `max_iter` CEM rounds from `state` and returns the first action
    /// of the final proposal mean. The remainder of that mean, shifted by one
    /// step, seeds the next call.
    pub fn plan<M: PlanningModel + ?Sized>(&mut self, state: &DVector<f64>, model: &M, seed: u64) -> Result<PlanResult> {
        self.plan_within(state, model, seed, usize::MAX)
    }

    /// [`Self::plan`] with returns scored over at most `steps_left` steps, so
    /// the objective stops at the end of the episode.
    pub fn plan_within<M: PlanningModel + ?Sized>(
        &mut self,
        state: &DVector<f64>,
        model: &M,
        seed: u64,
        steps_left: usize,
    ) -> Result<PlanResult> {
        if steps_left == 0 {
            return Err(Error::InvalidParameter("no steps left to plan for".into()));
        }
        if state.len() != model.state_dim() {
            return Err(Error::DimensionMismatch("state does not match the model".into()));
        }
        let cfg = self.config.clone();
        let (tau, da) = (cfg.horizon, self.spec.action_dim);
        let mut mean = self.initial_mean();
        let mut var = DMatrix::from_fn(tau, da, |_, j| self.init_std[j].powi(2));
        let mut trace = Vec::with_capacity(cfg.max_iter);
        let mut best = f64::NEG_INFINITY;
        let mut elite_mean_return = f64::NAN;
        let mut degenerate = false;
        let mut nonfinite_particles = 0;

        for it in 0..cfg.max_iter {
            let std = var.map(f64::sqrt);
            let candidates: Vec<DMatrix<f64>> = (0..cfg.popsize)
                .map(|c| self.sample_candidate(&mean, &std, seed, it, c))
                .collect();
            let shared = cfg
                .common_random_numbers
                .then(|| noise_block(seed, it as u64, SHARED_CANDIDATE, cfg.n_particles, tau * model.state_dim()));
            let scores: Vec<Score> = candidates
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(k, chunk)| {
                    score_chunk(
                        state,
                        chunk,
                        k * CHUNK,
                        model,
                        cfg.n_particles,
                        seed,
                        it as u64,
                        shared.as_ref(),
                        steps_left,
                    )
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            nonfinite_particles += scores.iter().map(|s| s.nonfinite).sum::<usize>();
            if scores.iter().all(|s| s.nonfinite == cfg.n_particles) {
                log::warn!("every CEM candidate diverged; falling back to the zero action");
                degenerate = true;
                break;
            }

            let mut order: Vec<usize> = (0..cfg.popsize).collect();
            order.sort_by(|&a, &b| scores[b].value.total_cmp(&scores[a].value));
            let elites = &order[..cfg.n_elites];
            best = best.max(scores[order[0]].value);
            trace.push(best);
            let k = cfg.n_elites as f64;
            elite_mean_return = elites.iter().map(|&e| scores[e].value).sum::<f64>() / k;

            let mut elite_mean = DMatrix::zeros(tau, da);
            for &e in elites {
                elite_mean += &candidates[e];
            }
            elite_mean /= k;
            let mut elite_var = DMatrix::zeros(tau, da);
            for &e in elites {
                elite_var += (&candidates[e] - &elite_mean).map(|d| d * d);
            }
            elite_var /= k;
            mean = &mean * cfg.alpha + elite_mean * (1.0 - cfg.alpha);
            var = &var * cfg.alpha + elite_var * (1.0 - cfg.alpha);
        }

        let action = if degenerate {
            self.warm = None;
            self.clamp_action(DVector::zeros(da))
        } else {
            let first = self.clamp_action(mean.row(0).transpose());
            let center = self.center();
            self.warm = Some(DMatrix::from_fn(tau, da, |t, j| {
                if t + 1 < tau {
                    mean[(t + 1, j)]
                } else {
                    center[j]
                }
            }));
            first
        };
        Ok(PlanResult {
            action,
            elite_mean_return,
            best_return_trace: trace,
            planned_sequence: mean,
            degenerate,
            nonfinite_particles,
        })
    }
}
