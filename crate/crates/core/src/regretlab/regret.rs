//! Bayesian regret of exact posterior sampling on scalar linear MDPs.
//!
//! True MDPs `s' = A s + B a + ε`, `r = w_s s + w_a a + ε_r` are drawn from a
//! prior: `A` and `B` standard normal truncated to `|A| ≤ state_cap`,
//! `|B| ≤ action_cap`, and `w ~ N(0, reward_scale² I)`. The agent holds the
//! same prior, so with identity features its conjugate posteriors are exact
//! (posterior draws are rejected until they land in the truncation box).
//! Each episode it solves the sampled MDP on the grid oracle, follows that
//! policy for one episode on the true MDP, and absorbs the data.
//!
//! Per-episode regret `Δ_k = V^{μ*}(ρ) − V^{μ_k}(ρ)` is estimated from
//! paired rollouts that share their noise, and is exactly zero when the two
//! policy tables coincide. The known-MDP control instead compares the grid
//! value `V*(ρ)` with independent rollouts of `μ*`, which checks the oracle
//! itself.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::griddp::{grid_dp_oracle, DpSolution, GridSpec};
use crate::bayes::{GaussianLinearPosterior, GaussianLinearPrior};
use crate::envs::{MdpSpec, SyntheticLinearMdp, SPECTRAL_CAP};
use crate::error::{Error, Result};
use crate::rng::{derived, StreamRng};

const TRUE_MDP_KEY: u64 = 1;
const SAMPLE_KEY: u64 = 2;
const ENV_KEY: u64 = 3;
const ROLLOUT_KEY: u64 = 4;

/// Posterior draws tried before falling back to clamping into the box.
const MAX_REJECTIONS: usize = 100_000;

/// Escape rate of policy lookups above which a run is flagged invalid.
pub const MAX_ESCAPE_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegretConfig {
    pub n_mdps: usize,
    pub noise_std: f64,
    pub state_cap: f64,
    pub action_cap: f64,
    pub reward_scale: f64,
    pub r_max: f64,
    pub state_points: usize,
    pub action_points: usize,
    pub hermite_nodes: usize,
    pub rollouts: usize,
    /// Hand the agent the true MDP instead of posterior samples.
    pub known_mdp: bool,
    pub seed: u64,
}

impl Default for RegretConfig {
    fn default() -> Self {
        Self {
            n_mdps: 20,
            noise_std: 1.0,
            state_cap: 0.95,
            action_cap: 2.0,
            reward_scale: 1.0,
            r_max: 100.0,
            state_points: 101,
            action_points: 11,
            hermite_nodes: 16,
            rollouts: 5000,
            known_mdp: false,
            seed: 0,
        }
    }
}

impl RegretConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.noise_std, self.action_cap, self.reward_scale, self.r_max];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter(
                "noise_std, action_cap, reward_scale and r_max must be positive".into(),
            ));
        }
        if !(self.state_cap > 0.0 && self.state_cap <= SPECTRAL_CAP) {
            return Err(Error::InvalidParameter(format!(
                "state_cap must lie in (0, {}]",
                SPECTRAL_CAP
            )));
        }
        if self.n_mdps == 0 || self.rollouts < 2 {
            return Err(Error::InvalidParameter("need at least one MDP and two rollouts".into()));
        }
        Ok(())
    }

    /// Bound on `|s_t|` from `s_0 = 0` when every noise draw stays within 4σ.
    pub fn state_bound(&self, horizon: usize) -> f64 {
        (0..horizon)
            .map(|t| self.state_cap.powi(t as i32) * (self.action_cap + 4.0 * self.noise_std))
            .sum()
    }

    pub fn grid(&self, horizon: usize) -> GridSpec {
        GridSpec::symmetric(1, self.state_bound(horizon), self.state_points, self.action_points, self.hermite_nodes)
    }

    fn spec(&self, horizon: usize) -> MdpSpec {
        MdpSpec {
            state_dim: 1,
            action_dim: 1,
            horizon,
            sigma_r: self.noise_std,
            sigma_f: self.noise_std,
            r_max: self.r_max,
            action_low: vec![-1.0],
            action_high: vec![1.0],
        }
    }

    fn build(&self, horizon: usize, a: f64, b: f64, w: [f64; 2]) -> Result<SyntheticLinearMdp> {
        SyntheticLinearMdp::new(
            DMatrix::from_row_slice(1, 2, &[a, b]),
            DVector::from_vec(w.to_vec()),
            self.spec(horizon),
            DVector::zeros(1),
        )
    }

    fn in_box(&self, a: f64, b: f64) -> bool {
        a.abs() <= self.state_cap && b.abs() <= self.action_cap
    }

    /// Draws a true MDP from the prior.
    pub fn sample_mdp(&self, horizon: usize, rng: &mut StreamRng) -> Result<SyntheticLinearMdp> {
        loop {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            if self.in_box(a, b) {
                let ws: f64 = rng.sample(StandardNormal);
                let wa: f64 = rng.sample(StandardNormal);
                return self.build(horizon, a, b, [self.reward_scale * ws, self.reward_scale * wa]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub mdp: usize,
    /// 1-based episode index `k`.
    pub episode: usize,
    pub regret: f64,
    pub cumulative: f64,
    /// `T = k · H`.
    pub t: usize,
}

/// Across-MDP mean and standard error per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub t: usize,
    pub mean_regret: f64,
    pub regret_stderr: f64,
    pub mean_cumulative: f64,
    pub cumulative_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRun {
    pub horizon: usize,
    pub episodes: usize,
    pub known_mdp: bool,
    pub records: Vec<RegretRecord>,
    pub curve: Vec<CurvePoint>,
    pub policy_lookups: u64,
    pub escapes: u64,
    pub escape_rate: f64,
    /// Escape rate above [`MAX_ESCAPE_RATE`].
    pub invalid: bool,
    /// Quadrature successors clamped at the grid edge while solving, summed over solves.
    pub boundary_clamps: u64,
    /// Fraction of episodes whose policy table equals the optimal one.
    pub identical_policy_fraction: f64,
    /// Posterior draws that exhausted the rejection budget and were clamped.
    pub clamped_samples: u64,
}

impl RegretRun {
    /// Mean cumulative regret after the first `t / H` episodes.
    pub fn cumulative_at(&self, t: usize) -> Option<f64> {
        let k = t / self.horizon;
        (k >= 1 && k <= self.curve.len()).then(|| self.curve[k - 1].mean_cumulative)
    }

    /// `Regret(4T) / Regret(T)`.
    pub fn growth_ratio(&self, t: usize) -> Option<f64> {
        Some(self.cumulative_at(4 * t)? / self.cumulative_at(t)?)
    }

    /// Mean per-episode regret over all records and its standard error.
    pub fn pooled_regret(&self) -> (f64, f64) {
        let n = self.records.len() as f64;
        let mean = self.records.iter().map(|r| r.regret).sum::<f64>() / n;
        let var = self.records.iter().map(|r| (r.regret - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }
}

struct MdpOutcome {
    regrets: Vec<f64>,
    lookups: u64,
    escapes: u64,
    boundary_clamps: u64,
    identical: usize,
    clamped: u64,
}

#[derive(Default)]
struct Rollouts {
    mean: f64,
    lookups: u64,
    escapes: u64,
}

/// One rollout of `policy` on the mean dynamics of `mdp` plus the given noise,
/// accumulating mean rewards.
fn rollout(mdp: &SyntheticLinearMdp, policy: &DpSolution, noise: &[f64], counts: &mut Rollouts) -> f64 {
    let a_coef = mdp.transition_matrix()[(0, 0)];
    let b_coef = mdp.transition_matrix()[(0, 1)];
    let mut s = mdp.initial_state()[0];
    let mut ret = 0.0;
    for (t, eps) in noise.iter().enumerate() {
        let (a, outside) = policy.action(t, &[s]);
        counts.lookups += 1;
        counts.escapes += outside as u64;
        ret += mdp.mean_reward_slice(&[s], &[a]);
        s = a_coef * s + b_coef * a + eps;
    }
    ret
}

/// Mean of `R(first) − R(second)` over rollouts sharing their noise; `second = None` gives `R(first)`.
fn mc_value(
    mdp: &SyntheticLinearMdp,
    first: &DpSolution,
    second: Option<&DpSolution>,
    n: usize,
    sigma: f64,
    rng: &mut StreamRng,
) -> Rollouts {
    let h = first.horizon();
    let mut noise = vec![0.0; h];
    let mut counts = Rollouts::default();
    let mut sum = 0.0;
    for _ in 0..n {
        for e in noise.iter_mut() {
            *e = sigma * rng.sample::<f64, _>(StandardNormal);
        }
        let mut v = rollout(mdp, first, &noise, &mut counts);
        if let Some(p) = second {
            v -= rollout(mdp, p, &noise, &mut counts);
        }
        sum += v;
    }
    counts.mean = sum / n as f64;
    counts
}

fn sample_posterior_mdp(
    config: &RegretConfig,
    horizon: usize,
    transition: &GaussianLinearPosterior,
    reward: &GaussianLinearPosterior,
    rng: &mut StreamRng,
) -> Result<(SyntheticLinearMdp, bool)> {
    let mut draw = transition.sample_weights(rng).weights;
    let mut clamped = false;
    let mut tries = 1;
    while !config.in_box(draw[(0, 0)], draw[(1, 0)]) {
        if tries == MAX_REJECTIONS {
            draw[(0, 0)] = draw[(0, 0)].clamp(-config.state_cap, config.state_cap);
            draw[(1, 0)] = draw[(1, 0)].clamp(-config.action_cap, config.action_cap);
            clamped = true;
            break;
        }
        draw = transition.sample_weights(rng).weights;
        tries += 1;
    }
    let w = reward.sample_weights(rng).weights;
    let mdp = config.build(horizon, draw[(0, 0)], draw[(1, 0)], [w[(0, 0)], w[(1, 0)]])?;
    Ok((mdp, clamped))
}

fn run_mdp(config: &RegretConfig, horizon: usize, episodes: usize, m: usize) -> Result<MdpOutcome> {
    let seed = config.seed;
    let sigma = config.noise_std;
    let grid = config.grid(horizon);
    let truth = config.sample_mdp(horizon, &mut derived(seed, &[TRUE_MDP_KEY, m as u64]))?;
    let oracle = grid_dp_oracle(&truth, &grid)?;
    let v_star = oracle.value_at(0, truth.initial_state().as_slice());

    let mut transition = GaussianLinearPosterior::from_prior(&GaussianLinearPrior::isotropic(2, 1.0, sigma * sigma)?, 1)?;
    let mut reward = GaussianLinearPosterior::from_prior(
        &GaussianLinearPrior::isotropic(2, config.reward_scale.powi(2), sigma * sigma)?,
        1,
    )?;

    let mut out = MdpOutcome {
        regrets: Vec::with_capacity(episodes),
        lookups: 0,
        escapes: 0,
        boundary_clamps: oracle.boundary_clamps as u64,
        identical: 0,
        clamped: 0,
    };
    let a_coef = truth.transition_matrix()[(0, 0)];
    let b_coef = truth.transition_matrix()[(0, 1)];
    for k in 0..episodes {
        let key = [m as u64, k as u64];
        let sampled;
        let policy = if config.known_mdp {
            &oracle
        } else {
            let mut rng = derived(seed, &[SAMPLE_KEY, key[0], key[1]]);
            let (mdp, clamped) = sample_posterior_mdp(config, horizon, &transition, &reward, &mut rng)?;
            out.clamped += clamped as u64;
            sampled = grid_dp_oracle(&mdp, &grid)?;
            out.boundary_clamps += sampled.boundary_clamps as u64;
            &sampled
        };

        // one episode on the true MDP
        let mut env_rng = derived(seed, &[ENV_KEY, key[0], key[1]]);
        let mut features = DMatrix::zeros(horizon, 2);
        let mut next_states = DMatrix::zeros(horizon, 1);
        let mut rewards = DMatrix::zeros(horizon, 1);
        let mut s = truth.initial_state()[0];
        for t in 0..horizon {
            let (a, outside) = policy.action(t, &[s]);
            out.lookups += 1;
            out.escapes += outside as u64;
            let next = a_coef * s + b_coef * a + sigma * env_rng.sample::<f64, _>(StandardNormal);
            let r = truth.mean_reward_slice(&[s], &[a]) + sigma * env_rng.sample::<f64, _>(StandardNormal);
            features[(t, 0)] = s;
            features[(t, 1)] = a;
            next_states[(t, 0)] = next;
            rewards[(t, 0)] = r;
            s = next;
        }
        transition = transition.sequential_update(&features, &next_states)?;
        reward = reward.sequential_update(&features, &rewards)?;

        let mut mc_rng = derived(seed, &[ROLLOUT_KEY, key[0], key[1]]);
        let regret = if config.known_mdp {
            let r = mc_value(&truth, &oracle, None, config.rollouts, sigma, &mut mc_rng);
            out.lookups += r.lookups;
            out.escapes += r.escapes;
            v_star - r.mean
        } else if policy.same_policy(&oracle) {
            out.identical += 1;
            0.0
        } else {
            let r = mc_value(&truth, &oracle, Some(policy), config.rollouts, sigma, &mut mc_rng);
            out.lookups += r.lookups;
            out.escapes += r.escapes;
            r.mean
        };
        out.regrets.push(regret);
    }
    Ok(out)
}

/// Runs `episodes` episodes of horizon `horizon` on each of `config.n_mdps` prior draws.
pub fn run_regret(config: &RegretConfig, horizon: usize, episodes: usize) -> Result<RegretRun> {
    config.validate()?;
    if horizon == 0 || episodes == 0 {
        return Err(Error::InvalidParameter("horizon and episodes must be positive".into()));
    }
    let outcomes: Vec<MdpOutcome> = (0..config.n_mdps)
        .into_par_iter()
        .map(|m| run_mdp(config, horizon, episodes, m))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(config.n_mdps * episodes);
    for (m, o) in outcomes.iter().enumerate() {
        let mut cumulative = 0.0;
        for (k, &regret) in o.regrets.iter().enumerate() {
            cumulative += regret;
            records.push(RegretRecord {
                mdp: m,
                episode: k + 1,
                regret,
                cumulative,
                t: (k + 1) * horizon,
            });
        }
    }

    let n = config.n_mdps as f64;
    let stats = |values: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = values.collect();
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        (mean, (var / n).sqrt())
    };
    let curve = (0..episodes)
        .map(|k| {
            let (mean_regret, regret_stderr) = stats(&mut (0..config.n_mdps).map(|m| records[m * episodes + k].regret));
            let (mean_cumulative, cumulative_stderr) =
                stats(&mut (0..config.n_mdps).map(|m| records[m * episodes + k].cumulative));
            CurvePoint {
                episode: k + 1,
                t: (k + 1) * horizon,
                mean_regret,
                regret_stderr,
                mean_cumulative,
                cumulative_stderr,
            }
        })
        .collect();

    let lookups: u64 = outcomes.iter().map(|o| o.lookups).sum();
    let escapes: u64 = outcomes.iter().map(|o| o.escapes).sum();
    let escape_rate = escapes as f64 / lookups.max(1) as f64;
    let identical: usize = outcomes.iter().map(|o| o.identical).sum();
    Ok(RegretRun {
        horizon,
        episodes,
        known_mdp: config.known_mdp,
        records,
        curve,
        policy_lookups: lookups,
        escapes,
        escape_rate,
        invalid: escape_rate > MAX_ESCAPE_RATE,
        boundary_clamps: outcomes.iter().map(|o| o.boundary_clamps).sum(),
        identical_policy_fraction: identical as f64 / (config.n_mdps * episodes) as f64,
        clamped_samples: outcomes.iter().map(|o| o.clamped).sum(),
    })
}

/// One run per horizon, each with `t_max / H` episodes.
pub fn bayes_regret_experiment(config: &RegretConfig, horizons: &[usize], t_max: usize) -> Result<Vec<RegretRun>> {
    horizons.iter().map(|&h| run_regret(config, h, t_max / h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RegretConfig {
        RegretConfig {
            n_mdps: 4,
            rollouts: 500,
            seed: 11,
            ..RegretConfig::default()
        }
    }

    #[test]
    fn prior_draws_respect_the_truncation() {
        let cfg = RegretConfig::default();
        let mut rng = derived(0, &[]);
        for _ in 0..200 {
            let mdp = cfg.sample_mdp(10, &mut rng).unwrap();
            let w = mdp.transition_matrix();
            assert!(w[(0, 0)].abs() <= 0.95 && w[(0, 1)].abs() <= 2.0);
        }
        assert!((cfg.state_bound(10) - 6.0 * (1.0 - 0.95f64.powi(10)) / 0.05).abs() < 1e-12);
    }

    #[test]
    fn cumulative_is_prefix_sum_and_runs_are_reproducible() {
        let run = run_regret(&small(), 10, 30).unwrap();
        assert_eq!(run.records.len(), 4 * 30);
        for m in 0..4 {
            let rows = &run.records[m * 30..(m + 1) * 30];
            let mut acc = 0.0;
            for r in rows {
                acc += r.regret;
                assert!((r.cumulative - acc).abs() < 1e-12);
                assert_eq!(r.t, r.episode * 10);
            }
        }
        assert!(!run.invalid);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let again = pool.install(|| run_regret(&small(), 10, 30).unwrap());
        assert_eq!(run, again);
    }

    #[test]
    fn paired_estimate_vanishes_for_identical_policies() {
        let cfg = small();
        let mdp = cfg.sample_mdp(10, &mut derived(1, &[])).unwrap();
        let sol = grid_dp_oracle(&mdp, &cfg.grid(10)).unwrap();
        let r = mc_value(&mdp, &sol, Some(&sol), 100, 1.0, &mut derived(2, &[]));
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn known_mdp_regret_is_centred_on_zero() {
        let cfg = RegretConfig {
            known_mdp: true,
            ..small()
        };
        let run = run_regret(&cfg, 10, 10).unwrap();
        let (mean, se) = run.pooled_regret();
        assert!(se > 0.0 && mean.abs() <= 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn regret_is_non_negative_on_average_and_learning_helps() {
        let run = run_regret(&small(), 10, 100).unwrap();
        let early: f64 = run.curve[..10].iter().map(|c| c.mean_regret).sum();
        let late: f64 = run.curve[90..].iter().map(|c| c.mean_regret).sum();
        assert!(early > 0.0);
        assert!(late < early);
        assert!(run.identical_policy_fraction > 0.5);
    }
}
