//! Aggregation of a finished run directory into plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::config::ExperimentKind;
use crate::error::{CliError, CliResult};
use crate::manifest::{write_atomic, RunManifest, RunStatus};
use crate::run::{REGRET_RECORDS_CSV, TRAIN_CSV};
use crate::svg::band_plot;

pub const REPORT_DIR: &str = "report";

/// Mean and sample standard deviation; a single value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn read_rows(path: &Path) -> CliResult<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let rows = r.records().collect::<Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

fn column(header: &csv::StringRecord, name: &str, path: &Path) -> CliResult<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Runtime(format!("{}: missing column {name}", path.display())))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<T> {
    s.parse().map_err(|_| CliError::Runtime(format!("cannot parse {what} value {s:?}")))
}

struct Writer<'a> {
    dir: &'a Path,
    manifest: &'a mut RunManifest,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let rel = format!("{REPORT_DIR}/{name}");
        write_atomic(&self.dir.join(&rel), bytes)?;
        self.manifest.record(&rel);
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
        self.put(name, &bytes)
    }

    /// `(x, mean, std)` table plus its plot.
    fn band(&mut self, stem: &str, x_name: &str, y_label: &str, points: &[(f64, f64, f64)]) -> CliResult<()> {
        let rows: Vec<Vec<String>> = points
            .iter()
            .map(|(x, m, s)| vec![format!("{x}"), format!("{m}"), format!("{s}")])
            .collect();
        self.table(&format!("{stem}.csv"), &[x_name, "mean", "std"], &rows)?;
        let svg = band_plot(stem, x_name, y_label, points);
        self.put(&format!("{stem}.svg"), svg.as_bytes())
    }
}

/// Writes `report/` inside `dir` and lists the new files in the manifest.
pub fn report(dir: &Path) -> CliResult<Vec<String>> {
    let mut manifest = RunManifest::load(dir)?;
    if manifest.status != RunStatus::Complete {
        log::warn!("run status is {:?}; reporting on the data present", manifest.status);
    }
    let report_dir = dir.join(REPORT_DIR);
    std::fs::create_dir_all(&report_dir).map_err(|e| CliError::io(&report_dir, e))?;
    let before: BTreeSet<String> = manifest.files.clone();
    let expected_trials = manifest.trial_seeds.len();
    {
        let mut w = Writer {
            dir,
            manifest: &mut manifest,
        };
        match w.manifest.kind {
            ExperimentKind::Train => train_report(&mut w, expected_trials)?,
            ExperimentKind::Regret => regret_report(&mut w)?,
            ExperimentKind::Theory => log::info!("theory runs have no curves to aggregate"),
        }
    }
    manifest.save(dir)?;
    Ok(manifest.files.difference(&before).cloned().collect())
}

fn train_report(w: &mut Writer<'_>, expected_trials: usize) -> CliResult<()> {
    let path = w.dir.join(TRAIN_CSV);
    let (header, rows) = read_rows(&path)?;
    let trial_col = column(&header, "trial", &path)?;
    let episode_col = column(&header, "episode", &path)?;
    let trials: BTreeSet<&str> = rows.iter().map(|r| &r[trial_col]).collect();
    if trials.len() < expected_trials {
        log::warn!(
            "{} of {expected_trials} trials present; aggregating over the available ones",
            trials.len()
        );
    }
    for metric in ["total_reward", "mean_pred_variance"] {
        let col = column(&header, metric, &path)?;
        let mut by_episode: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            by_episode
                .entry(parse(&r[episode_col], "episode")?)
                .or_default()
                .push(parse(&r[col], metric)?);
        }
        let points: Vec<(f64, f64, f64)> = by_episode
            .iter()
            .map(|(&e, v)| {
                let (m, s) = mean_std(v);
                (e as f64, m, s)
            })
            .collect();
        w.band(metric, "episode", metric, &points)?;
    }
    Ok(())
}

/// Cumulative regret per run, rebuilt as prefix sums of the per-episode
/// regret column, plus the learning run's regret-vs-√T table.
fn regret_report(w: &mut Writer<'_>) -> CliResult<()> {
    let path = w.dir.join(REGRET_RECORDS_CSV);
    let (header, rows) = read_rows(&path)?;
    let run_col = column(&header, "run", &path)?;
    let mdp_col = column(&header, "mdp", &path)?;
    let episode_col = column(&header, "episode", &path)?;
    let t_col = column(&header, "T", &path)?;
    let regret_col = column(&header, "regret", &path)?;

    // run -> mdp -> episode -> (T, regret)
    let mut runs: BTreeMap<String, BTreeMap<usize, BTreeMap<usize, (usize, f64)>>> = BTreeMap::new();
    for r in &rows {
        runs.entry(r[run_col].to_string())
            .or_default()
            .entry(parse(&r[mdp_col], "mdp")?)
            .or_default()
            .insert(
                parse(&r[episode_col], "episode")?,
                (parse(&r[t_col], "T")?, parse(&r[regret_col], "regret")?),
            );
    }
    for (label, mdps) in &runs {
        let mut by_t: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for episodes in mdps.values() {
            let mut sum = 0.0;
            for &(t, regret) in episodes.values() {
                sum += regret;
                by_t.entry(t).or_default().push(sum);
            }
        }
        let points: Vec<(f64, f64, f64)> = by_t
            .iter()
            .map(|(&t, v)| {
                let (m, s) = mean_std(v);
                (t as f64, m, s)
            })
            .collect();
        w.band(&format!("cumulative_regret_{label}"), "T", "cumulative regret", &points)?;
        if label == "learning" {
            let table: Vec<Vec<String>> = points
                .iter()
                .map(|&(t, m, _)| {
                    let root = t.sqrt();
                    vec![format!("{t}"), format!("{root}"), format!("{m}"), format!("{}", m / root)]
                })
                .collect();
            w.table("regret_vs_sqrt_t.csv", &["T", "sqrt_T", "cumulative_regret", "regret_over_sqrt_T"], &table)?;
        }
    }
    Ok(())
}
