use std::fs;
use std::path::{Path, PathBuf};

use pdsim::cli::artifacts::{inventory, RunManifest, RunStatus};
use pdsim::cli::main_with_args;

const SMALL: &str = r#"
[detector]
model = "ideal"
g_z_in_kB_units = 0.3
deltas_in_kB_units = [0.0]

[truncation]
dim_A = 20

[grid]
t_end_in_kB_units = 20.0
dt_in_kB_units = 0.005

[run]
n_traj = 6
base_seed = 3

[detection]
thresholds = [1.0, 1.5, 2.0]

[output]
current_format = "csv"
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("pdsim").chain(args.iter().copied()))
}

fn simulate(config: &Path, out: &Path) -> i32 {
    run(&["simulate", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()])
}

#[test]
fn simulate_then_metrics_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    assert_eq!(simulate(&config, &out), 0);
    let manifest = RunManifest::read(&out).unwrap();
    assert_eq!(manifest.status, RunStatus::Complete);
    let names: Vec<&str> = manifest.files.iter().map(|f| f.path.as_str()).collect();
    for expected in ["config.json", "currents/signal.csv", "currents/vacuum.csv", "me_traces.csv", "trajectories.csv"] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }

    assert_eq!(run(&["metrics", "--run-dir", out.to_str().unwrap()]), 0);
    let analysis = out.join("analysis");
    for f in ["metrics.json", "roc.csv", "histogram.csv", "photon_shape.csv", "manifest.json"] {
        assert!(analysis.join(f).exists(), "{f} not written");
    }
    let roc = fs::read_to_string(analysis.join("roc.csv")).unwrap();
    assert_eq!(roc.lines().next(), Some("Y_thr,gamma_dark,eta,method"));
    assert_eq!(roc.lines().count(), 4);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(simulate(&config, &a), 0);
    assert_eq!(simulate(&config, &b), 0);
    let strip = |p: &Path| {
        let mut files = inventory(p).unwrap();
        files.retain(|f| f.path != "manifest.json");
        files
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(RunManifest::read(&a).unwrap().config_hash, RunManifest::read(&b).unwrap().config_hash);
}

#[test]
fn zero_trajectories_is_a_validation_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &SMALL.replace("n_traj = 6", "n_traj = 0"));
    let out = dir.path().join("run");
    assert_eq!(simulate(&config, &out), 1);
    assert!(!out.exists());
}

#[test]
fn unit_mismatch_is_reported_per_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("t_end_in_kB_units = 20.0", "t_end_us = 20.0");
    let config = write_config(dir.path(), &bad);
    assert_eq!(simulate(&config, &dir.path().join("run")), 1);
}

#[test]
fn metrics_on_empty_directory_reports_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["metrics", "--run-dir", dir.path().to_str().unwrap()]), 1);
    assert!(!dir.path().join("analysis").exists());
}

#[test]
fn single_threshold_list_matches_single_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    assert_eq!(simulate(&config, &out), 0);
    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    let run_dir = out.to_str().unwrap();
    assert_eq!(run(&["metrics", "--run-dir", run_dir, "--threshold", "1.5", "--out-dir", x.to_str().unwrap()]), 0);
    assert_eq!(run(&["metrics", "--run-dir", run_dir, "--thresholds", "1.5", "--out-dir", y.to_str().unwrap()]), 0);
    for f in ["metrics.json", "roc.csv", "histogram.csv"] {
        assert_eq!(fs::read(x.join(f)).unwrap(), fs::read(y.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn truncation_breach_exits_with_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("g_z_in_kB_units = 0.3", "g_z_in_kB_units = 1.0").replace("dim_A = 20", "dim_A = 6");
    let config = write_config(dir.path(), &text);
    let out = dir.path().join("run");
    assert_eq!(simulate(&config, &out), 2);
    let manifest = RunManifest::read(&out).unwrap();
    assert_eq!(manifest.status, RunStatus::TruncationBreach);
    assert!(manifest.notes.iter().any(|n| n.contains("top-level population")));
}

#[test]
fn unknown_figure_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig");
    assert_eq!(run(&["reproduce", "--figure", "fig9", "--out-dir", out.to_str().unwrap()]), 1);
    assert!(!out.exists());
}

const OPTIMIZE: &str = r#"
[detector]
model = "ideal"
g_z_in_kB_units = 0.6
deltas_in_kB_units = [0.4, -0.4]

[grid]
t_end_in_kB_units = 10.0
dt_in_kB_units = 0.005

[optimize]
objective = "surrogate"
max_evaluations = 0
seed = 4
"#;

#[test]
fn optimize_with_zero_budget_returns_the_initial_point() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), OPTIMIZE);
    let out = dir.path().join("opt");
    let args = ["optimize", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    assert_eq!(run(&args), 0);
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("optimizer_result.json")).unwrap()).unwrap();
    assert_eq!(result["status"], "INCOMPLETE");
    assert_eq!(result["best_deltas"], serde_json::json!([0.4, -0.4]));
    let log = fs::read_to_string(out.join("optimizer_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("iteration,delta_1,delta_2,score"));
}

#[test]
fn optimize_log_is_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &OPTIMIZE.replace("max_evaluations = 0", "max_evaluations = 12"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run(&["optimize", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]), 0);
    }
    assert_eq!(
        fs::read(a.join("optimizer_log.csv")).unwrap(),
        fs::read(b.join("optimizer_log.csv")).unwrap()
    );
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = fs::read_to_string(&path).unwrap();
            let cfg = pdsim::cli::config::ExperimentConfig::from_toml(&text);
            assert!(cfg.is_ok(), "{}: {:?}", path.display(), cfg.err());
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
