//! The posterior-sampling MPC loop.
//!
//! Episode 0 acts uniformly at random. Every later episode draws one weight
//! sample per head from the current posteriors, plans every step with CEM on
//! that fixed sampled model, and logs the transitions. Between episodes the
//! feature networks are retrained on all data, every cached feature row is
//! recomputed, and both posteriors are rebuilt from scratch on the refreshed
//! features.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes::{posterior_from_data, GaussianLinearPosterior, GaussianLinearPrior};
use crate::dataset::Dataset;
pub use crate::dataset::TransitionTarget;
use crate::envs::{Environment, MdpSpec, Transition};
use crate::error::{Error, Result};
use crate::featnet::{refresh_features, Activation, FeatureMap, Mlp, MlpSpec};
use crate::planner::{CemConfig, CemPlanner, OracleModel, SampledModel};
use crate::rng::{derive_seed, derived};

mod keys {
    pub const INIT: u64 = 1;
    pub const RESET: u64 = 2;
    pub const ENV: u64 = 3;
    pub const SAMPLE_TRANSITION: u64 = 4;
    pub const SAMPLE_REWARD: u64 = 5;
    pub const PLAN: u64 = 6;
    pub const RANDOM: u64 = 7;
    pub const TRAIN_TRANSITION: u64 = 8;
    pub const TRAIN_REWARD: u64 = 9;
}

/// Network shape and training schedule; input and output sizes come from the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    /// Defaults to `max(8, d_s + d_a)`.
    #[serde(default)]
    pub penultimate_width: Option<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_true")]
    pub normalize_inputs: bool,
}

fn default_hidden() -> Vec<usize> {
    vec![200]
}
fn default_activation() -> Activation {
    Activation::Swish
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    5
}
fn default_max_steps() -> usize {
    2000
}
fn default_true() -> bool {
    true
}
fn default_one() -> f64 {
    1.0
}
fn default_retrain() -> usize {
    1
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_layers: default_hidden(),
            penultimate_width: None,
            activation: default_activation(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            max_steps: default_max_steps(),
            normalize_inputs: true,
        }
    }
}

impl NetConfig {
    pub fn to_spec(&self, input_dim: usize, output_dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_layers: self.hidden_layers.clone(),
            penultimate_width: self.penultimate_width.unwrap_or(input_dim.max(8)),
            output_dim,
            activation: self.activation,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            max_steps: self.max_steps,
            normalize_inputs: self.normalize_inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Raw `[s, a]` as the regression design.
    Identity,
    /// Penultimate activations of a fitted network, plus a constant 1.
    Network(NetConfig),
}

impl Default for FeatureKind {
    fn default() -> Self {
        FeatureKind::Network(NetConfig::default())
    }
}

/// Prior covariance scales and regression noise variances. Absent noise
/// variances default to the task's true `σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "default_one")]
    pub transition_scale: f64,
    #[serde(default = "default_one")]
    pub reward_scale: f64,
    #[serde(default)]
    pub transition_noise_variance: Option<f64>,
    #[serde(default)]
    pub reward_noise_variance: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            transition_scale: 1.0,
            reward_scale: 1.0,
            transition_noise_variance: None,
            reward_noise_variance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default)]
    pub transition_features: FeatureKind,
    #[serde(default)]
    pub reward_features: FeatureKind,
    #[serde(default)]
    pub transition_target: TransitionTarget,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub planner: CemConfig,
    pub episodes: usize,
    #[serde(default = "default_retrain")]
    pub retrain_every: usize,
    pub seed: u64,
}

impl AgentConfig {
    pub fn new(episodes: usize, seed: u64) -> Self {
        Self {
            transition_features: FeatureKind::default(),
            reward_features: FeatureKind::default(),
            transition_target: TransitionTarget::Delta,
            prior: PriorConfig::default(),
            planner: CemConfig::default(),
            episodes,
            retrain_every: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::InvalidParameter("episodes must be at least 1".into()));
        }
        if self.retrain_every == 0 {
            return Err(Error::InvalidParameter("retrain_every must be at least 1".into()));
        }
        if !(self.prior.transition_scale > 0.0 && self.prior.reward_scale > 0.0) {
            return Err(Error::InvalidParameter("prior scales must be positive".into()));
        }
        self.planner.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_index: usize,
    pub total_reward: f64,
    pub steps: usize,
    pub wall_time_ms: f64,
    /// Mean transition-head predictive variance over the visited points.
    pub mean_pred_variance: f64,
    pub max_pred_variance: f64,
    /// 1-based step with the largest predictive variance.
    pub kmax: usize,
    /// Weight draws per head this episode (0 for the random episode).
    pub samples_drawn: usize,
    pub truncated: bool,
    pub retrain_failed: bool,
    pub nonfinite_particles: usize,
}

/// Seeds for the three random sources of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSeeds {
    pub sample: u64,
    pub plan: u64,
    pub env: u64,
}

impl EpisodeSeeds {
    pub fn derive(seed: u64, episode: usize) -> Self {
        let k = episode as u64;
        Self {
            sample: derive_seed(seed, &[keys::SAMPLE_TRANSITION, k]),
            plan: derive_seed(seed, &[keys::PLAN, k]),
            env: derive_seed(seed, &[keys::ENV, k]),
        }
    }
}

/// Complete learner state. Serializable, and sufficient to continue a run:
/// all randomness is re-derived from `(seed, episode, purpose)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    config: AgentConfig,
    spec: MdpSpec,
    dataset: Dataset,
    transition_map: FeatureMap,
    reward_map: FeatureMap,
    transition_prior: GaussianLinearPrior,
    reward_prior: GaussianLinearPrior,
    transition_posterior: GaussianLinearPosterior,
    reward_posterior: GaussianLinearPosterior,
    episodes_done: usize,
}

fn build_map(kind: &FeatureKind, input: usize, output: usize, seed: u64, key: u64) -> Result<FeatureMap> {
    Ok(match kind {
        FeatureKind::Identity => FeatureMap::Identity { dim: input },
        FeatureKind::Network(net) => {
            FeatureMap::Network(Mlp::new(net.to_spec(input, output), &mut derived(seed, &[keys::INIT, key]))?)
        }
    })
}

fn noise_variance(explicit: Option<f64>, sigma: f64, head: &str) -> Result<f64> {
    let v = explicit.unwrap_or(sigma * sigma);
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{head} noise variance must be positive; set it explicitly for noiseless tasks"
        )));
    }
    Ok(v)
}

impl Agent {
    pub fn new(config: AgentConfig, spec: &MdpSpec) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let (ds, da) = (spec.state_dim, spec.action_dim);
        let transition_map = build_map(&config.transition_features, ds + da, ds, config.seed, 0)?;
        let reward_map = build_map(&config.reward_features, ds + da, 1, config.seed, 1)?;
        let transition_prior = GaussianLinearPrior::isotropic(
            transition_map.design_dim(),
            config.prior.transition_scale,
            noise_variance(config.prior.transition_noise_variance, spec.sigma_f, "transition")?,
        )?;
        let reward_prior = GaussianLinearPrior::isotropic(
            reward_map.design_dim(),
            config.prior.reward_scale,
            noise_variance(config.prior.reward_noise_variance, spec.sigma_r, "reward")?,
        )?;
        Ok(Self {
            transition_posterior: GaussianLinearPosterior::from_prior(&transition_prior, ds)?,
            reward_posterior: GaussianLinearPosterior::from_prior(&reward_prior, 1)?,
            dataset: Dataset::new(ds, da),
            spec: spec.clone(),
            config,
            transition_map,
            reward_map,
            transition_prior,
            reward_prior,
            episodes_done: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn is_finished(&self) -> bool {
        self.episodes_done >= self.config.episodes
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn transition_map(&self) -> &FeatureMap {
        &self.transition_map
    }

    pub fn reward_map(&self) -> &FeatureMap {
        &self.reward_map
    }

    pub fn transition_posterior(&self) -> &GaussianLinearPosterior {
        &self.transition_posterior
    }

    pub fn reward_posterior(&self) -> &GaussianLinearPosterior {
        &self.reward_posterior
    }

    pub fn transition_prior(&self) -> &GaussianLinearPrior {
        &self.transition_prior
    }

    fn design(map: &FeatureMap, state: &DVector<f64>, action: &DVector<f64>) -> Result<DVector<f64>> {
        let input = DVector::from_iterator(state.len() + action.len(), state.iter().chain(action.iter()).copied());
        map.design(&input)
    }

    /// Draws one weight matrix per head and wraps them as the episode's model.
    pub fn sample_model(&self, sample_seed: u64) -> SampledModel {
        let mut rng_f = derived(sample_seed, &[keys::SAMPLE_TRANSITION]);
        let mut rng_r = derived(sample_seed, &[keys::SAMPLE_REWARD]);
        SampledModel {
            transition_map: self.transition_map.clone(),
            reward_map: self.reward_map.clone(),
            transition_weights: self.transition_posterior.sample_weights(&mut rng_f).weights,
            reward_weights: self.reward_posterior.sample_weights(&mut rng_r).weights,
            target: self.config.transition_target,
            sigma_f: self.transition_posterior.noise_variance().sqrt(),
            sigma_r: self.reward_posterior.noise_variance().sqrt(),
            r_max: self.spec.r_max,
        }
    }

    /// Plays episode `episode` without changing the learner. Episode 0 acts
    /// uniformly at random; later episodes sample once and plan with MPC.
    pub fn act_episode<E: Environment + ?Sized>(
        &self,
        env: &E,
        episode: usize,
        seeds: &EpisodeSeeds,
    ) -> Result<(EpisodeRecord, Vec<Transition>)> {
        let started = Instant::now();
        let spec = env.spec();
        let mut env_rng = derived(seeds.env, &[keys::ENV]);
        let mut random_rng = derived(seeds.env, &[keys::RANDOM]);
        let mut state = env.reset(&mut derived(seeds.env, &[keys::RESET]));

        let (model, mut planner) = if episode == 0 {
            (None, None)
        } else {
            let model = self.sample_model(seeds.sample);
            model.validate()?;
            (Some(model), Some(CemPlanner::new(self.config.planner.clone(), spec)?))
        };

        let mut transitions = Vec::with_capacity(spec.horizon);
        let mut variances = Vec::with_capacity(spec.horizon);
        let mut total_reward = 0.0;
        let mut truncated = false;
        let mut nonfinite_particles = 0;
        for step in 0..spec.horizon {
            let action = match (&model, planner.as_mut()) {
                (Some(model), Some(planner)) => {
                    let plan = planner.plan_within(
                        &state,
                        model,
                        derive_seed(seeds.plan, &[step as u64]),
                        spec.horizon - step,
                    )?;
                    nonfinite_particles += plan.nonfinite_particles;
                    plan.action
                }
                _ => spec.random_action(&mut random_rng),
            };
            let action = spec.clamp_action(&action).0;
            let (next_state, reward) = match env.step(&state, &action, &mut env_rng) {
                Ok(out) => out,
                Err(Error::EpisodeAborted(msg)) => {
                    log::warn!("episode {episode} aborted at step {}: {msg}", step + 1);
                    truncated = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let phi = Self::design(&self.transition_map, &state, &action)?;
            variances.push(self.transition_posterior.predictive_variance(&phi)?);
            total_reward += reward;
            transitions.push(Transition {
                state: state.clone(),
                action,
                reward,
                next_state: next_state.clone(),
                episode_index: episode,
                step_index: step + 1,
            });
            state = next_state;
        }

        let (kmax, max_pred_variance) = variances
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i + 1, v) } else { best });
        let mean_pred_variance = if variances.is_empty() {
            0.0
        } else {
            variances.iter().sum::<f64>() / variances.len() as f64
        };
        Ok((
            EpisodeRecord {
                episode_index: episode,
                total_reward,
                steps: transitions.len(),
                wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
                mean_pred_variance,
                max_pred_variance: max_pred_variance.max(0.0),
                kmax,
                samples_drawn: usize::from(model.is_some()),
                truncated,
                retrain_failed: false,
                nonfinite_particles,
            },
            transitions,
        ))
    }

    /// Appends an episode's transitions, retrains the feature networks when
    /// due, refreshes every cached feature row and rebuilds both posteriors
    /// from scratch. Returns whether a network retrain failed (the previous
    /// network is kept in that case).
    pub fn absorb(&mut self, episode: usize, transitions: Vec<Transition>) -> Result<bool> {
        self.dataset.append(transitions)?;
        let mut failed = false;
        if (episode + 1) % self.config.retrain_every == 0 {
            let inputs = self.dataset.inputs();
            let k = episode as u64;
            let t_targets = self.dataset.transition_targets(self.config.transition_target);
            failed |= retrain(&mut self.transition_map, &inputs, &t_targets, self.config.seed, &[keys::TRAIN_TRANSITION, k]);
            let r_targets = self.dataset.rewards();
            failed |= retrain(&mut self.reward_map, &inputs, &r_targets, self.config.seed, &[keys::TRAIN_REWARD, k]);
        }
        self.dataset = refresh_features(&self.dataset, &self.transition_map, &self.reward_map)?;
        self.rebuild_posteriors()?;
        Ok(failed)
    }

    fn rebuild_posteriors(&mut self) -> Result<()> {
        let phi_f = self.dataset.transition_features().expect("caches refreshed");
        let phi_r = self.dataset.reward_features().expect("caches refreshed");
        self.transition_posterior = posterior_from_data(
            &self.transition_prior,
            phi_f,
            &self.dataset.transition_targets(self.config.transition_target),
        )?;
        self.reward_posterior = posterior_from_data(&self.reward_prior, phi_r, &self.dataset.rewards())?;
        Ok(())
    }

    /// Plays and absorbs the next episode.
    pub fn run_next_episode<E: Environment + ?Sized>(&mut self, env: &E) -> Result<EpisodeRecord> {
        let k = self.episodes_done;
        let (mut record, transitions) = self.act_episode(env, k, &EpisodeSeeds::derive(self.config.seed, k))?;
        record.retrain_failed = self.absorb(k, transitions)?;
        self.episodes_done += 1;
        Ok(record)
    }
}

fn retrain(map: &mut FeatureMap, inputs: &DMatrix<f64>, targets: &DMatrix<f64>, seed: u64, key: &[u64]) -> bool {
    let FeatureMap::Network(net) = map else {
        return false;
    };
    match net.train(inputs, targets, &mut derived(seed, key)) {
        Ok(trained) => {
            *net = trained;
            false
        }
        Err(e) => {
            log::warn!("{e}; keeping the previous network");
            true
        }
    }
}

/// Runs the full episode budget from scratch and returns the learning curve.
pub fn run_training<E: Environment + ?Sized>(env: &E, config: AgentConfig) -> Result<Vec<EpisodeRecord>> {
    let mut agent = Agent::new(config, env.spec())?;
    let mut records = Vec::with_capacity(agent.config.episodes);
    while !agent.is_finished() {
        records.push(agent.run_next_episode(env)?);
    }
    Ok(records)
}

/// Return of one episode under uniformly random actions.
pub fn random_policy_return<E: Environment + ?Sized>(env: &E, seed: u64) -> Result<f64> {
    let spec = env.spec();
    let mut env_rng = derived(seed, &[keys::ENV]);
    let mut random_rng = derived(seed, &[keys::RANDOM]);
    let mut state = env.reset(&mut derived(seed, &[keys::RESET]));
    let mut total = 0.0;
    for _ in 0..spec.horizon {
        let action = spec.random_action(&mut random_rng);
        let (next, reward) = env.step(&state, &action, &mut env_rng)?;
        total += reward;
        state = next;
    }
    Ok(total)
}

/// Return of one episode planned with CEM on the true mean dynamics.
pub fn oracle_mpc_return<E: Environment>(env: &E, planner: &CemConfig, seed: u64) -> Result<f64> {
    let spec = env.spec();
    let model = OracleModel { env };
    let mut cem = CemPlanner::new(planner.clone(), spec)?;
    let mut env_rng = derived(seed, &[keys::ENV]);
    let mut state = env.reset(&mut derived(seed, &[keys::RESET]));
    let mut total = 0.0;
    for step in 0..spec.horizon {
        let plan = cem.plan_within(&state, &model, derive_seed(seed, &[keys::PLAN, step as u64]), spec.horizon - step)?;
        let (next, reward) = env.step(&state, &plan.action, &mut env_rng)?;
        total += reward;
        state = next;
    }
    Ok(total)
}
