//! Episodic continuous-control tasks.
//!
//! Every task follows the same contract: `s' = f(s, a) + ε_f` with
//! `ε_f ~ N(0, σ_f² I)`, `r = r̄(s, a) + ε_r` with `ε_r ~ N(0, σ_r²)`, a fixed
//! horizon of `H` steps and no early termination. The noiseless pair
//! `(f, r̄)` is exposed through [`Environment::oracle_mean_dynamics`] for
//! regret accounting and reference planning.

mod cartpole;
mod linear;
mod pendulum;

pub use cartpole::StochasticCartpole;
pub use linear::{state_block_spectral_radius, LinearMdpConfig, SyntheticLinearMdp, SPECTRAL_CAP};
pub use pendulum::PendulumSwingUp;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub sigma_r: f64,
    pub sigma_f: f64,
    pub r_max: f64,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl MdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::InvalidParameter("state and action dimensions must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if !(self.sigma_r >= 0.0 && self.sigma_f >= 0.0) {
            return Err(Error::InvalidParameter("noise standard deviations must be non-negative".into()));
        }
        if !(self.r_max > 0.0) {
            return Err(Error::InvalidParameter("r_max must be positive".into()));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::DimensionMismatch("action box does not match action_dim".into()));
        }
        if self.action_low.iter().zip(&self.action_high).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidParameter("action_low must be below action_high".into()));
        }
        Ok(())
    }

    /// Clamps an action into the box; the flag reports whether anything moved.
    pub fn clamp_action(&self, action: &DVector<f64>) -> (DVector<f64>, bool) {
        let mut clamped = false;
        let out = DVector::from_iterator(
            action.len(),
            action.iter().enumerate().map(|(i, &a)| {
                let c = a.clamp(self.action_low[i], self.action_high[i]);
                clamped |= c != a;
                c
            }),
        );
        (out, clamped)
    }

    pub fn random_action(&self, rng: &mut StreamRng) -> DVector<f64> {
        DVector::from_iterator(
            self.action_dim,
            self.action_low
                .iter()
                .zip(&self.action_high)
                .map(|(&lo, &hi)| rng.random_range(lo..hi)),
        )
    }
}

/// One logged step. `step_index` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: DVector<f64>,
    pub action: DVector<f64>,
    pub reward: f64,
    pub next_state: DVector<f64>,
    pub episode_index: usize,
    pub step_index: usize,
}

pub trait Environment: Sync {
    fn spec(&self) -> &MdpSpec;

    /// Draws an initial state from ρ.
    fn reset(&self, rng: &mut StreamRng) -> DVector<f64>;

    /// Noiseless `(f(s, a), r̄(s, a))`. The action is assumed to be in the box.
    fn oracle_mean_dynamics(&self, state: &DVector<f64>, action: &DVector<f64>) -> (DVector<f64>, f64);

    /// One noisy transition. Out-of-box actions are clamped with a warning.
    fn step(
        &self,
        state: &DVector<f64>,
        action: &DVector<f64>,
        rng: &mut StreamRng,
    ) -> Result<(DVector<f64>, f64)> {
        let spec = self.spec();
        let (action, clamped) = spec.clamp_action(action);
        if clamped {
            log::warn!("action clamped into the action box");
        }
        let (mut next, mut reward) = self.oracle_mean_dynamics(state, &action);
        for x in next.iter_mut() {
            *x += spec.sigma_f * rng.sample::<f64, _>(StandardNormal);
        }
        reward += spec.sigma_r * rng.sample::<f64, _>(StandardNormal);
        if !reward.is_finite() || next.iter().any(|x| !x.is_finite()) {
            return Err(Error::EpisodeAborted(format!(
                "non-finite transition from state {:?}",
                state.as_slice()
            )));
        }
        Ok((next, reward))
    }
}

/// Serializable environment selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Cartpole {
        #[serde(default = "default_noise_std")]
        noise_std: f64,
        #[serde(default)]
        horizon: Option<usize>,
    },
    Pendulum {
        #[serde(default = "default_noise_std")]
        noise_std: f64,
        #[serde(default)]
        horizon: Option<usize>,
    },
    Linear(LinearMdpConfig),
}

fn default_noise_std() -> f64 {
    0.1
}

impl EnvConfig {
    pub fn build(&self) -> Result<Env> {
        Ok(match self {
            EnvConfig::Cartpole { noise_std, horizon } => {
                let mut env = StochasticCartpole::with_noise(*noise_std);
                if let Some(h) = horizon {
                    env.set_horizon(*h);
                }
                env.spec().validate()?;
                Env::Cartpole(env)
            }
            EnvConfig::Pendulum { noise_std, horizon } => {
                let mut env = PendulumSwingUp::with_noise(*noise_std);
                if let Some(h) = horizon {
                    env.set_horizon(*h);
                }
                env.spec().validate()?;
                Env::Pendulum(env)
            }
            EnvConfig::Linear(cfg) => Env::Linear(cfg.build()?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Cartpole { .. } => "cartpole",
            EnvConfig::Pendulum { .. } => "pendulum",
            EnvConfig::Linear(_) => "linear",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Env {
    Cartpole(StochasticCartpole),
    Pendulum(PendulumSwingUp),
    Linear(SyntheticLinearMdp),
}

impl Environment for Env {
    fn spec(&self) -> &MdpSpec {
        match self {
            Env::Cartpole(e) => e.spec(),
            Env::Pendulum(e) => e.spec(),
            Env::Linear(e) => e.spec(),
        }
    }

    fn reset(&self, rng: &mut StreamRng) -> DVector<f64> {
        match self {
            Env::Cartpole(e) => e.reset(rng),
            Env::Pendulum(e) => e.reset(rng),
            Env::Linear(e) => e.reset(rng),
        }
    }

    fn oracle_mean_dynamics(&self, state: &DVector<f64>, action: &DVector<f64>) -> (DVector<f64>, f64) {
        match self {
            Env::Cartpole(e) => e.oracle_mean_dynamics(state, action),
            Env::Pendulum(e) => e.oracle_mean_dynamics(state, action),
            Env::Linear(e) => e.oracle_mean_dynamics(state, action),
        }
    }
}
