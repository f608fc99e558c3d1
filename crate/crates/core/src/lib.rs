//! Model-based posterior sampling for continuous control.
//!
//! The crate is organised around the episode loop of an MPC-driven posterior
//! sampling agent:
//!
//! - [`bayes`]: exact Bayesian linear regression over feature vectors.
//! - [`featnet`]: small MLPs whose penultimate layer is used as the feature map.
//! - [`envs`]: episodic stochastic control tasks with oracle access to the mean dynamics.
//! - [`planner`]: cross-entropy-method MPC over a sampled model.
//! - [`agent`]: the episode loop (sample, plan, retrain, refresh, rebuild).
//! - [`regretlab`]: numerical checks of the regret analysis (TV bounds,
//!   concentration, variance sums, Bayesian regret on synthetic linear MDPs).

pub mod agent;
pub mod bayes;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod featnet;
pub mod planner;
pub mod regretlab;
pub mod rng;

pub use error::{Error, Result};
