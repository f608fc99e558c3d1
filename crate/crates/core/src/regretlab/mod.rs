//! Numerical checks of the regret analysis: TV bounds, posterior concentration,
//! the variance-sum bound, and Bayesian regret on small linear MDPs.

pub mod concentration;
pub mod griddp;
pub mod quadrature;
pub mod regret;
pub mod suites;
pub mod tv;
pub mod varsum;

pub use concentration::{concentration_check, concentration_radius, ConcentrationReport};
pub use griddp::{grid_dp_oracle, DpModel, DpSolution, GridSpec};
pub use regret::{bayes_regret_experiment, run_regret, RegretConfig, RegretRecord, RegretRun};
pub use tv::{lemma1_bound_check, tv_gaussian_shared_cov, Lemma1Check, NoiseFamily, SymmetricNoiseSpec};
pub use varsum::{variance_sum_experiment, VarianceSumReport};
