//! Experiment runner for posterior-sampling model-based control.
//!
//! `psrl run <config.toml | train | regret | theory>`, `psrl resume <checkpoint>`
//! and `psrl report <run-dir>`. Exit codes: 0 success, 1 runtime or
//! checkpoint failure, 2 invalid configuration or usage.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod run;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use psrl_core::envs::{EnvConfig, LinearMdpConfig};

use crate::config::{ExperimentConfig, ExperimentKind, TheorySuite};
use crate::error::{CliError, CliResult};
use crate::run::{resolve_out_dir, resolve_workers, with_workers, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "psrl", version, about = "Posterior-sampling MPC experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment from a TOML config, or from defaults for a kind.
    Run(RunArgs),
    /// Continue a train run from its checkpoint.
    Resume {
        checkpoint: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Aggregate a run directory into mean/std tables and plots.
    Report { dir: PathBuf },
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Config file path, or one of `train`, `regret`, `theory`.
    pub target: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Train only: cartpole, pendulum or linear.
    #[arg(long)]
    pub env: Option<String>,
    /// Train only.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Train only: independent trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Theory only: lemma1, gaussian_tv, varsum, concentration or all.
    #[arg(long)]
    pub suite: Option<String>,
    /// Theory only: random cases per family.
    #[arg(long)]
    pub cases: Option<usize>,
    /// Halt a train run after this many episodes per trial (resumable).
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

fn env_by_name(name: &str) -> CliResult<EnvConfig> {
    Ok(match name {
        "cartpole" => EnvConfig::Cartpole {
            noise_std: 0.1,
            horizon: None,
        },
        "pendulum" => EnvConfig::Pendulum {
            noise_std: 0.1,
            horizon: None,
        },
        "linear" => EnvConfig::Linear(LinearMdpConfig {
            state_dim: 1,
            action_dim: 1,
            horizon: 10,
            noise_std: 0.1,
            r_max: 10.0,
            action_bound: 1.0,
            transition: None,
            reward: None,
            initial_state: None,
        }),
        other => return Err(CliError::Config(format!("--env: unknown environment {other:?}"))),
    })
}

/// Loads or builds the config and applies command-line overrides.
pub fn build_config(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let kind = match args.target.as_str() {
        "train" => Some(ExperimentKind::Train),
        "regret" => Some(ExperimentKind::Regret),
        "theory" => Some(ExperimentKind::Theory),
        _ => None,
    };
    let mut cfg = match kind {
        Some(kind) => ExperimentConfig::defaults(kind, args.seed.unwrap_or(0)),
        None => ExperimentConfig::load(&PathBuf::from(&args.target))?,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let only = |flag: &str, kind: ExperimentKind| CliError::Config(format!("{flag} applies to {} runs only", kind.name()));
    if args.env.is_some() || args.episodes.is_some() || args.trials.is_some() {
        if cfg.kind != ExperimentKind::Train {
            return Err(only("--env/--episodes/--trials", ExperimentKind::Train));
        }
        if let Some(name) = &args.env {
            cfg.env = Some(env_by_name(name)?);
        }
        if let Some(n) = args.episodes {
            cfg.train.as_mut().expect("filled").episodes = n;
        }
        if let Some(n) = args.trials {
            cfg.trials = n;
        }
    }
    if args.suite.is_some() || args.cases.is_some() {
        if cfg.kind != ExperimentKind::Theory {
            return Err(only("--suite/--cases", ExperimentKind::Theory));
        }
        let theory = cfg.theory.as_mut().expect("filled");
        if let Some(name) = &args.suite {
            theory.suite = TheorySuite::parse(name).ok_or_else(|| CliError::Config(format!("--suite: unknown suite {name:?}")))?;
        }
        if let Some(n) = args.cases {
            theory.cases = n;
        }
    }
    if args.stop_after.is_some() && cfg.kind != ExperimentKind::Train {
        return Err(only("--stop-after", ExperimentKind::Train));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = build_config(&args)?;
            let dir = resolve_out_dir(args.out.clone(), &cfg);
            let workers = resolve_workers(args.workers, cfg.workers)?;
            let opts = RunOptions {
                stop_after: args.stop_after,
            };
            let status = with_workers(workers, || run::run_experiment(&cfg, &dir, opts))??;
            log::info!("{} run finished ({status:?}); outputs in {}", cfg.kind.name(), dir.display());
        }
        Command::Resume {
            checkpoint,
            workers,
            stop_after,
        } => {
            let workers = resolve_workers(workers, None)?;
            let status = with_workers(workers, || run::resume(&checkpoint, RunOptions { stop_after }))??;
            log::info!("resume finished ({status:?})");
        }
        Command::Report { dir } => {
            for f in report::report(&dir)? {
                println!("{}", dir.join(f).display());
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
