//! Experiment execution: train, regret and theory runs.

use std::path::{Path, PathBuf};

use psrl_core::agent::Agent;
use psrl_core::envs::Environment;
use psrl_core::regretlab::suites::{
    concentration_suite, gaussian_tv_suite, lemma1_suite, regret_suite, varsum_suite, ConcentrationSummary,
    GaussianTvSummary, Lemma1Summary, RegretSummary, VarsumSummary,
};
use psrl_core::regretlab::RegretRun;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, TrialState, CHECKPOINT_FILE};
use crate::config::{ExperimentConfig, ExperimentKind, TheorySuite};
use crate::error::{CliError, CliResult};
use crate::manifest::{write_atomic, RunManifest, RunStatus};

pub const TRAIN_CSV: &str = "train.csv";
pub const CONFIG_JSON: &str = "config.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REGRET_RECORDS_CSV: &str = "regret_records.csv";
pub const REGRET_CURVE_CSV: &str = "regret_curve.csv";
pub const REGRET_GROWTH_CSV: &str = "regret_growth.csv";
pub const REGRET_SWEEP_CSV: &str = "regret_sweep.csv";

/// Output directory: explicit value, else `PSRL_OUT_DIR`, else the config,
/// else `runs/<kind>-<seed>`.
pub fn resolve_out_dir(explicit: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os("PSRL_OUT_DIR").map(PathBuf::from))
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", config.kind.name(), config.seed)))
}

/// Worker count: explicit value, else `PSRL_WORKERS`, else the config; 0 means all cores.
pub fn resolve_workers(explicit: Option<usize>, config_value: Option<usize>) -> CliResult<usize> {
    if let Some(w) = explicit {
        return Ok(w);
    }
    if let Ok(v) = std::env::var("PSRL_WORKERS") {
        return v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("PSRL_WORKERS: expected a non-negative integer, got {v:?}")));
    }
    Ok(config_value.unwrap_or(0))
}

pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Stop a train run once every trial has finished this many episodes.
    pub stop_after: Option<usize>,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, manifest: &mut RunManifest) -> CliResult<()> {
    let mut json = serde_json::to_string_pretty(value).expect("serializable");
    json.push('\n');
    write_atomic(&dir.join(name), json.as_bytes())?;
    manifest.record(name);
    Ok(())
}

fn write_csv(dir: &Path, name: &str, header: &[&str], rows: Vec<Vec<String>>, manifest: &mut RunManifest) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&dir.join(name), &bytes)?;
    manifest.record(name);
    Ok(())
}

/// Shortest round-trip decimal form.
fn num(x: f64) -> String {
    format!("{x}")
}

/// Creates the run directory, records the resolved config and runs the
/// experiment. The manifest is written first and finalized last, including
/// on failure.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path, opts: RunOptions) -> CliResult<RunStatus> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut manifest = RunManifest::new(config);
    manifest.save(dir)?;
    write_json(dir, CONFIG_JSON, config, &mut manifest)?;
    manifest.save(dir)?;

    let outcome = match config.kind {
        ExperimentKind::Train => fresh_checkpoint(config).and_then(|ckpt| train_loop(ckpt, dir, &mut manifest, opts)),
        ExperimentKind::Regret => regret(config, dir, &mut manifest).map(|_| RunStatus::Complete),
        ExperimentKind::Theory => theory(config, dir, &mut manifest).map(|_| RunStatus::Complete),
    };
    finalize(dir, &mut manifest, outcome)
}

fn finalize(dir: &Path, manifest: &mut RunManifest, outcome: CliResult<RunStatus>) -> CliResult<RunStatus> {
    match outcome {
        Ok(status) => {
            manifest.finish(status, None);
            manifest.save(dir)?;
            Ok(status)
        }
        Err(e) => {
            manifest.finish(RunStatus::Failed, Some(e.to_string()));
            manifest.save(dir)?;
            Err(e)
        }
    }
}

/// Continues a train run from its checkpoint. A finished run is left untouched.
pub fn resume(checkpoint_path: &Path, opts: RunOptions) -> CliResult<RunStatus> {
    let ckpt = Checkpoint::load(checkpoint_path)?;
    if ckpt.is_finished() {
        log::info!("run in {} is already complete", checkpoint_path.display());
        return Ok(RunStatus::Complete);
    }
    let dir = checkpoint_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let mut manifest = match RunManifest::load(&dir) {
        Ok(m) if m.config_hash == ckpt.config.hash_hex() => m,
        Ok(_) => return Err(CliError::Integrity("checkpoint does not belong to this run directory".into())),
        Err(_) => {
            log::warn!("no manifest next to the checkpoint; starting a new one");
            let mut m = RunManifest::new(&ckpt.config);
            write_json(&dir, CONFIG_JSON, &ckpt.config, &mut m)?;
            m
        }
    };
    manifest.status = RunStatus::Running;
    manifest.finished_unix = None;
    manifest.save(&dir)?;
    let outcome = train_loop(ckpt, &dir, &mut manifest, opts);
    finalize(&dir, &mut manifest, outcome)
}

fn fresh_checkpoint(config: &ExperimentConfig) -> CliResult<Checkpoint> {
    let env_cfg = config.env.as_ref().expect("validated");
    let env = env_cfg.build()?;
    let train = config.train.as_ref().expect("validated");
    let trials = (0..config.trials)
        .map(|trial| {
            let seed = config.trial_seed(trial);
            Ok(TrialState {
                trial,
                seed,
                agent: Agent::new(train.agent_config(env_cfg, seed), env.spec())?,
                records: Vec::new(),
            })
        })
        .collect::<CliResult<_>>()?;
    Ok(Checkpoint {
        config: config.clone(),
        trials,
    })
}

fn train_rows(ckpt: &Checkpoint) -> Vec<Vec<String>> {
    ckpt.trials
        .iter()
        .flat_map(|t| {
            t.records.iter().map(move |r| {
                vec![
                    t.trial.to_string(),
                    (r.episode_index + 1).to_string(),
                    num(r.total_reward),
                    num(r.mean_pred_variance),
                    format!("{:.3}", r.wall_time_ms),
                ]
            })
        })
        .collect()
}

pub const TRAIN_HEADER: [&str; 5] = ["trial", "episode", "total_reward", "mean_pred_variance", "wall_ms"];

/// Advances all trials in blocks of `checkpoint_every` episodes, rewriting
/// the CSV and the checkpoint after each block.
fn train_loop(mut ckpt: Checkpoint, dir: &Path, manifest: &mut RunManifest, opts: RunOptions) -> CliResult<RunStatus> {
    let config = ckpt.config.clone();
    let env = config.env.as_ref().expect("validated").build()?;
    let train = config.train.as_ref().expect("validated");
    let total = train.episodes;
    let limit = opts.stop_after.map_or(total, |s| s.min(total));
    let block = if train.checkpoint_every == 0 { total } else { train.checkpoint_every };

    loop {
        let done = ckpt.trials.iter().map(|t| t.agent.episodes_done()).min().unwrap_or(total);
        if done >= limit {
            break;
        }
        let target = ((done / block + 1) * block).min(limit);
        ckpt.trials.par_iter_mut().try_for_each(|t| -> CliResult<()> {
            while t.agent.episodes_done() < target {
                let rec = t.agent.run_next_episode(&env)?;
                log::info!(
                    "trial {} episode {} return {:.3} mean_pred_variance {:.3e} ({:.0} ms)",
                    t.trial,
                    rec.episode_index + 1,
                    rec.total_reward,
                    rec.mean_pred_variance,
                    rec.wall_time_ms
                );
                t.records.push(rec);
            }
            Ok(())
        })?;
        write_csv(dir, TRAIN_CSV, &TRAIN_HEADER, train_rows(&ckpt), manifest)?;
        ckpt.save(&dir.join(CHECKPOINT_FILE))?;
        manifest.record(CHECKPOINT_FILE);
        manifest.save(dir)?;
    }
    if ckpt.trials.iter().all(|t| t.records.is_empty()) {
        write_csv(dir, TRAIN_CSV, &TRAIN_HEADER, Vec::new(), manifest)?;
    }
    Ok(if limit < total { RunStatus::Stopped } else { RunStatus::Complete })
}

fn run_label(index: usize, run: &RegretRun) -> String {
    match index {
        0 => "learning".into(),
        1 => "control".into(),
        _ => format!("sweep_h{}", run.horizon),
    }
}

fn regret(config: &ExperimentConfig, dir: &Path, manifest: &mut RunManifest) -> CliResult<()> {
    let mut suite = config.regret.clone().expect("validated");
    suite.regret.seed = config.seed;
    let (summary, runs) = regret_suite(&suite)?;

    let mut records = Vec::new();
    let mut curve = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let label = run_label(i, run);
        for r in &run.records {
            records.push(vec![
                label.clone(),
                run.horizon.to_string(),
                r.mdp.to_string(),
                r.episode.to_string(),
                r.t.to_string(),
                num(r.regret),
                num(r.cumulative),
            ]);
        }
        for p in &run.curve {
            curve.push(vec![
                label.clone(),
                run.horizon.to_string(),
                p.episode.to_string(),
                p.t.to_string(),
                num(p.mean_regret),
                num(p.regret_stderr),
                num(p.mean_cumulative),
                num(p.cumulative_stderr),
            ]);
        }
    }
    write_csv(
        dir,
        REGRET_RECORDS_CSV,
        &["run", "H", "mdp", "episode", "T", "regret", "cumulative"],
        records,
        manifest,
    )?;
    write_csv(
        dir,
        REGRET_CURVE_CSV,
        &["run", "H", "episode", "T", "regret", "stderr", "cumulative", "cumulative_stderr"],
        curve,
        manifest,
    )?;
    let growth = summary
        .growth
        .iter()
        .map(|g| vec![g.t.to_string(), num(g.regret_t), num(g.regret_4t), num(g.ratio), g.sublinear.to_string()])
        .collect();
    write_csv(dir, REGRET_GROWTH_CSV, &["T", "regret_T", "regret_4T", "ratio", "sublinear"], growth, manifest)?;
    let sweep = summary
        .sweep
        .iter()
        .map(|s| vec![s.horizon.to_string(), s.t.to_string(), num(s.regret), num(s.ratio_to_base)])
        .collect();
    write_csv(dir, REGRET_SWEEP_CSV, &["H", "T", "regret", "ratio_to_base"], sweep, manifest)?;

    #[derive(Serialize)]
    struct RunStats {
        run: String,
        horizon: usize,
        episodes: usize,
        escape_rate: f64,
        invalid: bool,
        boundary_clamps: u64,
        identical_policy_fraction: f64,
        clamped_samples: u64,
    }
    #[derive(Serialize)]
    struct Out<'a> {
        kind: &'static str,
        summary: &'a RegretSummary,
        runs: Vec<RunStats>,
    }
    let stats = runs
        .iter()
        .enumerate()
        .map(|(i, r)| RunStats {
            run: run_label(i, r),
            horizon: r.horizon,
            episodes: r.episodes,
            escape_rate: r.escape_rate,
            invalid: r.invalid,
            boundary_clamps: r.boundary_clamps,
            identical_policy_fraction: r.identical_policy_fraction,
            clamped_samples: r.clamped_samples,
        })
        .collect();
    write_json(
        dir,
        SUMMARY_JSON,
        &Out {
            kind: "regret",
            summary: &summary,
            runs: stats,
        },
        manifest,
    )
}

/// Theory summary. `violations` and `passed` aggregate the suites that ran.
#[derive(Debug, Serialize)]
pub struct TheorySummary {
    pub suite: TheorySuite,
    pub violations: usize,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemma1: Option<Lemma1Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian_tv: Option<GaussianTvSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub varsum: Option<VarsumSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concentration: Option<ConcentrationSummary>,
}

fn theory(config: &ExperimentConfig, dir: &Path, manifest: &mut RunManifest) -> CliResult<()> {
    let t = config.theory.as_ref().expect("validated");
    let seed = config.seed;
    let mut out = TheorySummary {
        suite: t.suite,
        violations: 0,
        passed: true,
        lemma1: None,
        gaussian_tv: None,
        varsum: None,
        concentration: None,
    };

    if t.suite.includes(TheorySuite::Lemma1) {
        let (summary, rows) = lemma1_suite(t.cases, seed)?;
        let rows = rows
            .iter()
            .map(|r| {
                vec![
                    r.family.name().to_string(),
                    r.case.to_string(),
                    r.dim.to_string(),
                    num(r.scale),
                    num(r.distance),
                    num(r.tv),
                    num(r.bound),
                    r.holds.to_string(),
                    r.flagged.to_string(),
                    r.exact_product_l1.map(num).unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(
            dir,
            "lemma1.csv",
            &["family", "case", "d", "scale", "distance", "tv", "bound", "holds", "flagged", "exact_product_l1"],
            rows,
            manifest,
        )?;
        out.violations += summary.violations;
        out.passed &= summary.violations == 0 && summary.flagged == 0;
        out.lemma1 = Some(summary);
    }
    if t.suite.includes(TheorySuite::GaussianTv) {
        let summary = gaussian_tv_suite(t.cases, t.rotation_cases, seed)?;
        out.passed &= summary.within_tolerance && summary.rotation_invariant;
        out.gaussian_tv = Some(summary);
    }
    if t.suite.includes(TheorySuite::Varsum) {
        let (summary, reports) = varsum_suite(&t.varsum_dims, t.varsum_episodes, t.varsum_points, t.varsum_noise_variance, seed)?;
        let mut rows = Vec::new();
        for r in &reports {
            for k in 0..r.episodes() {
                rows.push(vec![
                    r.dim.to_string(),
                    (k + 1).to_string(),
                    num(r.max_variances[k]),
                    num(r.cumulative[k]),
                    num(r.bound_cumulative[k]),
                    num(r.information_gain[k]),
                ]);
            }
        }
        write_csv(
            dir,
            "varsum.csv",
            &["d", "n", "max_variance", "cumulative", "bound", "information_gain"],
            rows,
            manifest,
        )?;
        out.violations += summary.rows.iter().map(|r| r.pointwise_violations).sum::<usize>();
        out.passed &= summary.passed;
        out.varsum = Some(summary);
    }
    if t.suite.includes(TheorySuite::Concentration) {
        let summary = concentration_suite(&t.deltas, &t.state_dims, t.draws, seed)?;
        let rows = summary
            .reports
            .iter()
            .map(|r| {
                vec![
                    num(r.delta),
                    r.state_dim.to_string(),
                    r.n_trials.to_string(),
                    num(r.coverage),
                    num(r.std_error),
                    num(r.threshold),
                    r.holds.to_string(),
                ]
            })
            .collect();
        write_csv(
            dir,
            "concentration.csv",
            &["delta", "d_s", "draws", "coverage", "stderr", "threshold", "holds"],
            rows,
            manifest,
        )?;
        out.passed &= summary.passed;
        out.concentration = Some(summary);
    }
    write_json(dir, SUMMARY_JSON, &out, manifest)
}
