//! Experiment configuration file (TOML).
//!
//! ```toml
//! kind = "train"          # train | regret | theory
//! seed = 7
//! trials = 5
//! out_dir = "runs/cartpole"
//!
//! [env]
//! kind = "cartpole"       # cartpole | pendulum | linear
//!
//! [train]
//! episodes = 30
//! checkpoint_every = 5
//! ```
//!
//! Unknown keys are rejected. Only `PSRL_OUT_DIR` and `PSRL_WORKERS` are
//! read from the environment.

use std::path::{Path, PathBuf};

use psrl_core::agent::{AgentConfig, FeatureKind, PriorConfig, TransitionTarget};
use psrl_core::envs::EnvConfig;
use psrl_core::planner::CemConfig;
use psrl_core::regretlab::suites::RegretSuiteConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Train,
    Regret,
    Theory,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Regret => "regret",
            ExperimentKind::Theory => "theory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 or absent uses every core. Never changes results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regret: Option<RegretSuiteConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheorySection>,
}

fn default_trials() -> usize {
    1
}

/// Agent settings. Absent feature and planner sections fall back to the
/// per-task defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    /// Checkpoint cadence in episodes; 0 writes one only at the end.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_features: Option<FeatureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_features: Option<FeatureKind>,
    #[serde(default)]
    pub transition_target: TransitionTarget,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<CemConfig>,
    #[serde(default = "default_retrain")]
    pub retrain_every: usize,
}

fn default_episodes() -> usize {
    30
}
fn default_checkpoint_every() -> usize {
    5
}
fn default_retrain() -> usize {
    1
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            episodes: default_episodes(),
            checkpoint_every: default_checkpoint_every(),
            transition_features: None,
            reward_features: None,
            transition_target: TransitionTarget::default(),
            prior: PriorConfig::default(),
            planner: None,
            retrain_every: default_retrain(),
        }
    }
}

impl TrainSection {
    /// Agent configuration for one trial.
    pub fn agent_config(&self, env: &EnvConfig, seed: u64) -> AgentConfig {
        let planner = self.planner.clone().unwrap_or_else(|| match env {
            EnvConfig::Cartpole { .. } => CemConfig::cartpole(),
            EnvConfig::Pendulum { .. } => CemConfig::pendulum(),
            EnvConfig::Linear(l) => CemConfig {
                horizon: l.horizon.min(20),
                ..CemConfig::pendulum()
            },
        });
        AgentConfig {
            transition_features: self.transition_features.clone().unwrap_or_default(),
            reward_features: self.reward_features.clone().unwrap_or_default(),
            transition_target: self.transition_target,
            prior: self.prior.clone(),
            planner,
            episodes: self.episodes,
            retrain_every: self.retrain_every,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheorySuite {
    Lemma1,
    GaussianTv,
    Varsum,
    Concentration,
    All,
}

impl TheorySuite {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "lemma1" => TheorySuite::Lemma1,
            "gaussian_tv" | "gaussian-tv" | "tv" => TheorySuite::GaussianTv,
            "varsum" => TheorySuite::Varsum,
            "concentration" => TheorySuite::Concentration,
            "all" => TheorySuite::All,
            _ => return None,
        })
    }

    pub fn includes(self, other: TheorySuite) -> bool {
        self == TheorySuite::All || self == other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    pub suite: TheorySuite,
    /// Random cases per noise family (and for the Gaussian TV comparison).
    pub cases: usize,
    pub rotation_cases: usize,
    pub varsum_dims: Vec<usize>,
    pub varsum_episodes: usize,
    pub varsum_points: usize,
    pub varsum_noise_variance: f64,
    pub deltas: Vec<f64>,
    pub state_dims: Vec<usize>,
    /// Posterior draws per concentration check.
    pub draws: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            suite: TheorySuite::All,
            cases: 1000,
            rotation_cases: 100,
            varsum_dims: vec![2, 4, 8],
            varsum_episodes: 2000,
            varsum_points: 10,
            varsum_noise_variance: 0.01,
            deltas: vec![0.05, 0.1],
            state_dims: vec![1, 3],
            draws: 100_000,
        }
    }
}

fn invalid(field: &str, msg: &str) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind, seed: u64) -> Self {
        let mut cfg = Self {
            kind,
            seed,
            trials: 1,
            out_dir: None,
            workers: None,
            env: None,
            train: None,
            regret: None,
            theory: None,
        };
        cfg.fill_sections();
        cfg
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.fill_sections();
        Ok(cfg)
    }

    /// Inserts default sections for the selected kind.
    pub fn fill_sections(&mut self) {
        match self.kind {
            ExperimentKind::Train => {
                self.env.get_or_insert(EnvConfig::Cartpole {
                    noise_std: 0.1,
                    horizon: None,
                });
                self.train.get_or_insert_with(TrainSection::default);
            }
            ExperimentKind::Regret => {
                self.regret.get_or_insert_with(RegretSuiteConfig::default);
            }
            ExperimentKind::Theory => {
                self.theory.get_or_insert_with(TheorySection::default);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        match self.kind {
            ExperimentKind::Train => {
                let env = self.env.as_ref().ok_or_else(|| invalid("env", "required for train"))?;
                env.build().map_err(|e| invalid("env", &e.to_string()))?;
                let train = self.train.as_ref().ok_or_else(|| invalid("train", "required for train"))?;
                if train.episodes == 0 {
                    return Err(invalid("train.episodes", "must be at least 1"));
                }
                train
                    .agent_config(env, self.seed)
                    .validate()
                    .map_err(|e| invalid("train", &e.to_string()))?;
            }
            ExperimentKind::Regret => {
                let r = self.regret.as_ref().ok_or_else(|| invalid("regret", "required for regret"))?;
                r.regret.validate().map_err(|e| invalid("regret.regret", &e.to_string()))?;
                if r.horizon == 0 || r.t_max < r.horizon {
                    return Err(invalid("regret.t_max", "must cover at least one episode of regret.horizon"));
                }
                if r.control_episodes == 0 {
                    return Err(invalid("regret.control_episodes", "must be at least 1"));
                }
                if r.sweep_horizons.iter().any(|&h| h == 0 || h > r.t_max) {
                    return Err(invalid("regret.sweep_horizons", "each horizon must be in 1..=t_max"));
                }
            }
            ExperimentKind::Theory => {
                let t = self.theory.as_ref().ok_or_else(|| invalid("theory", "required for theory"))?;
                if t.cases == 0 {
                    return Err(invalid("theory.cases", "must be at least 1"));
                }
                if t.varsum_dims.contains(&0) || t.varsum_episodes < 2 || t.varsum_points == 0 {
                    return Err(invalid("theory.varsum_*", "dims, points must be positive and episodes at least 2"));
                }
                if !(t.varsum_noise_variance > 0.0) {
                    return Err(invalid("theory.varsum_noise_variance", "must be positive"));
                }
                if t.deltas.iter().any(|&d| !(d > 0.0 && d < 0.5)) {
                    return Err(invalid("theory.deltas", "each delta must lie in (0, 0.5)"));
                }
                if t.state_dims.contains(&0) || t.draws == 0 {
                    return Err(invalid("theory.state_dims", "state dims and draws must be positive"));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory and
    /// worker count.
    pub fn hash(&self) -> [u8; 32] {
        let canonical = Self {
            out_dir: None,
            workers: None,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&json).into()
    }

    pub fn hash_hex(&self) -> String {
        hex(&self.hash())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        psrl_core::rng::derive_seed(self.seed, &[trial as u64])
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
