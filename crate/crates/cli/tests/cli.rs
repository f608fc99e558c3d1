use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psrl_cli::manifest::RunManifest;
use tempfile::TempDir;

const SMALL_TRAIN: &str = r#"
kind = "train"
seed = 11
trials = 2

[env]
kind = "linear"
state_dim = 1
action_dim = 1
horizon = 10

[train]
episodes = 30
checkpoint_every = 5

[train.transition_features]
kind = "network"
hidden_layers = [8]
epochs = 3

[train.reward_features]
kind = "network"
hidden_layers = [8]
epochs = 3

[train.planner]
popsize = 30
n_elites = 5
horizon = 5
max_iter = 2
n_particles = 2
"#;

const SMALL_REGRET: &str = r#"
kind = "regret"
seed = 3

[regret]
horizon = 5
t_max = 200
checkpoints = [10, 25]
control_episodes = 4
sweep_horizons = [10]

[regret.regret]
n_mdps = 3
rollouts = 100
state_points = 41
action_points = 5
hermite_nodes = 8
"#;

fn psrl(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_psrl"));
    cmd.args(args).env_remove("PSRL_OUT_DIR").env_remove("PSRL_WORKERS").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

/// Every column except the wall-clock one.
fn numeric_rows(path: &Path) -> Vec<Vec<String>> {
    csv_rows(path).into_iter().map(|mut r| {
        r.truncate(4);
        r
    }).collect()
}

fn files_under(root: &Path) -> BTreeSet<String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeSet<String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(root, root, &mut out);
    out
}

fn assert_no_orphans(dir: &Path) {
    let manifest = RunManifest::load(dir).unwrap();
    let mut present = files_under(dir);
    assert!(present.remove("manifest.json"));
    assert_eq!(present, manifest.files, "manifest and directory disagree in {}", dir.display());
}

#[test]
fn one_episode_gives_one_row_per_trial() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    ok(&psrl(
        &["run", "train", "--env", "pendulum", "--episodes", "1", "--seed", "7", "--trials", "2", "--out", out.to_str().unwrap()],
        &[],
    ));
    let rows = csv_rows(&out.join("train.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), vec!["1", "1"]);
    let header = std::fs::read_to_string(out.join("train.csv")).unwrap();
    assert!(header.starts_with("trial,episode,total_reward,mean_pred_variance,wall_ms\n"));
    let manifest = RunManifest::load(&out).unwrap();
    assert_eq!(manifest.status, psrl_cli::manifest::RunStatus::Complete);
    assert_eq!(manifest.trial_seeds.len(), 2);
    assert!(manifest.finished_unix.is_some());
    assert_no_orphans(&out);
}

#[test]
fn reruns_and_worker_counts_agree_and_resume_matches() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL_TRAIN);
    let dir = |name: &str| tmp.path().join(name);
    let run = |name: &str, workers: &str, extra: &[&str]| {
        let out = dir(name);
        let mut args = vec!["run", cfg.as_str(), "--out", out.to_str().unwrap(), "--workers", workers];
        args.extend_from_slice(extra);
        psrl(&args, &[])
    };
    ok(&run("a", "1", &[]));
    ok(&run("b", "3", &[]));
    let full = numeric_rows(&dir("a").join("train.csv"));
    assert_eq!(full.len(), 60);
    assert_eq!(full, numeric_rows(&dir("b").join("train.csv")));

    // interrupted after 10 episodes, then resumed
    ok(&run("c", "2", &["--stop-after", "10"]));
    let partial = RunManifest::load(&dir("c")).unwrap();
    assert_eq!(partial.status, psrl_cli::manifest::RunStatus::Stopped);
    assert_eq!(csv_rows(&dir("c").join("train.csv")).len(), 20);
    let ckpt = dir("c").join("checkpoint.psrl");
    ok(&psrl(&["resume", ckpt.to_str().unwrap(), "--workers", "1"], &[]));
    assert_eq!(numeric_rows(&dir("c").join("train.csv")), full);
    assert_eq!(RunManifest::load(&dir("c")).unwrap().status, psrl_cli::manifest::RunStatus::Complete);
    assert_no_orphans(&dir("c"));

    // resuming a finished run changes nothing
    let before = std::fs::read(dir("c").join("train.csv")).unwrap();
    let manifest_before = std::fs::read(dir("c").join("manifest.json")).unwrap();
    ok(&psrl(&["resume", ckpt.to_str().unwrap()], &[]));
    assert_eq!(std::fs::read(dir("c").join("train.csv")).unwrap(), before);
    assert_eq!(std::fs::read(dir("c").join("manifest.json")).unwrap(), manifest_before);

    // report over the two trials
    ok(&psrl(&["report", dir("a").to_str().unwrap()], &[]));
    let agg = csv_rows(&dir("a").join("report/total_reward.csv"));
    assert_eq!(agg.len(), 30);
    assert!(dir("a").join("report/total_reward.svg").exists());
    assert!(dir("a").join("report/mean_pred_variance.csv").exists());
    assert_no_orphans(&dir("a"));
}

#[test]
fn corrupted_checkpoint_is_an_integrity_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", &SMALL_TRAIN.replace("episodes = 30", "episodes = 4"));
    let out = tmp.path().join("run");
    ok(&psrl(&["run", &cfg, "--out", out.to_str().unwrap(), "--stop-after", "1"], &[]));
    let ckpt = out.join("checkpoint.psrl");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&ckpt, &bytes).unwrap();
    let res = psrl(&["resume", ckpt.to_str().unwrap()], &[]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("integrity"));

    let missing = psrl(&["resume", tmp.path().join("nope.psrl").to_str().unwrap()], &[]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn schema_violations_exit_2_with_the_field() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("unknown.toml", "kind = \"train\"\nseed = 1\n[train]\nepisodez = 3\n", "episodez"),
        ("noseed.toml", "kind = \"theory\"\n", "seed"),
        ("badval.toml", "kind = \"theory\"\nseed = 1\n[theory]\ncases = 0\n", "theory.cases"),
        ("badenv.toml", "kind = \"train\"\nseed = 1\n[env]\nkind = \"mujoco\"\n", "mujoco"),
    ];
    for (name, text, needle) in cases {
        let cfg = write_config(tmp.path(), name, text);
        let res = psrl(&["run", &cfg, "--out", tmp.path().join(name).with_extension("d").to_str().unwrap()], &[]);
        assert_eq!(res.status.code(), Some(2), "{name}");
        let err = String::from_utf8_lossy(&res.stderr);
        assert!(err.contains(needle), "{name}: {err}");
    }
    let res = psrl(&["run", "theory", "--episodes", "3"], &[]);
    assert_eq!(res.status.code(), Some(2));
    let res = psrl(&["run", "theory", "--suite", "lemma1"], &[("PSRL_WORKERS", "many")]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(psrl(&["frobnicate"], &[]).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1_and_marks_the_manifest() {
    let tmp = TempDir::new().unwrap();
    // A noiseless task cannot set the regression noise from the task.
    let text = "kind = \"train\"\nseed = 1\n[env]\nkind = \"linear\"\nstate_dim = 1\naction_dim = 1\nhorizon = 5\nnoise_std = 0.0\n";
    let cfg = write_config(tmp.path(), "noiseless.toml", text);
    let out = tmp.path().join("run");
    let res = psrl(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(res.status.code(), Some(1));
    let manifest = RunManifest::load(&out).unwrap();
    assert_eq!(manifest.status, psrl_cli::manifest::RunStatus::Failed);
    assert!(manifest.error.unwrap().contains("noise variance"));
    assert_no_orphans(&out);
}

#[test]
fn lemma1_theory_run_has_no_violations() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("theory");
    ok(&psrl(&["run", "theory", "--suite", "lemma1", "--cases", "1000", "--out", out.to_str().unwrap()], &[]));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["violations"], 0);
    assert_eq!(summary["lemma1"]["cases_per_family"], 1000);
    assert_eq!(csv_rows(&out.join("lemma1.csv")).len(), 3000);
    ok(&psrl(&["report", out.to_str().unwrap()], &[]));
    assert_no_orphans(&out);
}

#[test]
fn out_dir_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("from-env");
    ok(&psrl(
        &["run", "theory", "--suite", "concentration"],
        &[("PSRL_OUT_DIR", out.to_str().unwrap()), ("PSRL_WORKERS", "2")],
    ));
    assert!(out.join("concentration.csv").exists());
    assert_no_orphans(&out);
}

#[test]
fn regret_run_reports_against_sqrt_t() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "regret.toml", SMALL_REGRET);
    let out = tmp.path().join("regret");
    ok(&psrl(&["run", &cfg, "--out", out.to_str().unwrap()], &[]));
    let records = csv_rows(&out.join("regret_records.csv"));
    // 3 MDPs x (40 learning + 4 control + 20 sweep) episodes
    assert_eq!(records.len(), 3 * (40 + 4 + 20));
    ok(&psrl(&["report", out.to_str().unwrap()], &[]));
    let table = csv_rows(&out.join("report/regret_vs_sqrt_t.csv"));
    assert_eq!(table.len(), 40);

    // the table is the across-MDP mean of per-MDP prefix sums of the regret column
    let learning: Vec<_> = records.iter().filter(|r| r[0] == "learning").collect();
    for (k, row) in table.iter().enumerate() {
        let episode = k + 1;
        let mean: f64 = (0..3)
            .map(|m| {
                learning
                    .iter()
                    .filter(|r| r[2] == m.to_string() && r[3].parse::<usize>().unwrap() <= episode)
                    .map(|r| r[5].parse::<f64>().unwrap())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / 3.0;
        let t: f64 = row[0].parse().unwrap();
        assert_eq!(t, (episode * 5) as f64);
        let got: f64 = row[2].parse().unwrap();
        assert!((got - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        let ratio: f64 = row[3].parse().unwrap();
        assert!((ratio - got / t.sqrt()).abs() < 1e-12);
    }
    assert!(out.join("report/cumulative_regret_control.svg").exists());
    assert_no_orphans(&out);
}

fn synthetic_train_dir(root: &Path, trials: usize, rewards: impl Fn(usize, usize) -> f64) -> PathBuf {
    let dir = root.join(format!("synthetic{trials}"));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = psrl_cli::config::ExperimentConfig {
        trials,
        ..psrl_cli::config::ExperimentConfig::defaults(psrl_cli::config::ExperimentKind::Train, 0)
    };
    let mut manifest = RunManifest::new(&cfg);
    let mut text = String::from("trial,episode,total_reward,mean_pred_variance,wall_ms\n");
    for t in 0..trials {
        for e in 1..=4 {
            text.push_str(&format!("{t},{e},{},0.5,1.0\n", rewards(t, e)));
        }
    }
    std::fs::write(dir.join("train.csv"), text).unwrap();
    manifest.record("train.csv");
    manifest.finish(psrl_cli::manifest::RunStatus::Complete, None);
    manifest.save(&dir).unwrap();
    dir
}

#[test]
fn report_of_constant_rewards_has_zero_spread() {
    let tmp = TempDir::new().unwrap();
    let five = synthetic_train_dir(tmp.path(), 5, |_, _| 1.0);
    ok(&psrl(&["report", five.to_str().unwrap()], &[]));
    for row in csv_rows(&five.join("report/total_reward.csv")) {
        assert_eq!((row[1].as_str(), row[2].as_str()), ("1", "0"));
    }
    assert_no_orphans(&five);

    let single = synthetic_train_dir(tmp.path(), 1, |_, e| e as f64 * 1.5);
    ok(&psrl(&["report", single.to_str().unwrap()], &[]));
    let rows = csv_rows(&single.join("report/total_reward.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[2] == "0"));
}
