//! Built-in parameter sets for the fidelity, ROC and crossing-time figures.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::artifacts::{self, RunManifest, RunStatus};
use super::{checked_experiment, histogram_at, prepare_dir, write_histograms, CliError, ReproduceArgs};
use crate::detection::write_series_csv;
use crate::experiment::{best_metrics, threshold_grid, RunSettings};
use crate::integrator::{SolverChoice, TimeGrid};
use crate::metrics::{write_roc_csv, MetricsSummary};
use crate::model::DetectorConfig;

/// Default histogram thresholds for the N = 4 threshold sweep.
const SWEEP_THRESHOLDS: [f64; 4] = [3.0, 3.4, 3.8, 4.2];

#[derive(Debug, Clone, Serialize)]
struct Case {
    label: String,
    detector: DetectorConfig,
    grid: TimeGrid,
    histogram_bin_width: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Plan {
    figure: String,
    n_traj: usize,
    base_seed: u64,
    thresholds: Vec<f64>,
    sweep_thresholds: Vec<f64>,
    cases: Vec<Case>,
}

impl Plan {
    fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("plan serializes")))
    }
}

fn ideal_case(n: usize) -> Case {
    Case {
        label: format!("ideal_N{n}"),
        detector: DetectorConfig::ideal_preset(n).expect("preset exists"),
        grid: TimeGrid::with_stride(140.0, 0.005, 10).expect("valid grid"),
        histogram_bin_width: 1.0,
    }
}

fn dispersive_case() -> Case {
    let detector = DetectorConfig::dispersive_preset();
    let dt = 0.005 / detector.kappa_b;
    Case {
        label: "dispersive_N4".into(),
        grid: TimeGrid::with_stride(2.5, dt, 10).expect("valid grid"),
        histogram_bin_width: 1.0 / detector.kappa_b,
        detector,
    }
}

/// Emitted photon flux `κ_C e^{−κ_C t}` at the record times.
pub fn photon_shape(cfg: &DetectorConfig, grid: &TimeGrid) -> Vec<f64> {
    grid.record_times()
        .iter()
        .map(|t| cfg.kappa_c * (-cfg.kappa_c * t).exp())
        .collect()
}

struct CaseResult {
    case: Case,
    output: crate::experiment::ExperimentOutput,
    best: MetricsSummary,
}

fn run_case(case: &Case, plan: &Plan, threads: Option<usize>) -> Result<CaseResult, CliError> {
    let settings = RunSettings {
        grid: case.grid,
        n_traj: plan.n_traj,
        base_seed: plan.base_seed,
        solver: SolverChoice::Auto,
        workers: threads,
        noise_oversampling: 1,
    };
    eprintln!("running {} ({} + {} trajectories)", case.label, plan.n_traj, plan.n_traj);
    let output = checked_experiment(&case.detector, &settings)?;
    let best = best_metrics(&output.analysis, &plan.thresholds)?;
    Ok(CaseResult {
        case: case.clone(),
        output,
        best,
    })
}

pub(super) fn cmd_reproduce(args: &ReproduceArgs) -> Result<(), CliError> {
    if args.n_traj == 0 {
        return Err(CliError::Validation("--n-traj must be at least 1".into()));
    }
    let cases: Vec<Case> = match args.figure.as_str() {
        "fig3a" => (1..=4).map(ideal_case).chain([dispersive_case()]).collect(),
        "fig3b" => vec![ideal_case(4)],
        "fig4a" => (1..=4).map(ideal_case).collect(),
        "fig4b" => vec![ideal_case(4)],
        other => {
            return Err(CliError::Validation(format!(
                "unknown figure `{other}` (expected fig3a, fig3b, fig4a or fig4b)"
            )))
        }
    };
    let sweep = args.thresholds.clone().unwrap_or_else(|| SWEEP_THRESHOLDS.to_vec());
    if sweep.iter().any(|t| !(*t > 0.0)) {
        return Err(CliError::Validation("thresholds must be positive".into()));
    }
    let lo = if args.figure == "fig3b" { 0.5 } else { 1.0 };
    let plan = Plan {
        figure: args.figure.clone(),
        n_traj: args.n_traj,
        base_seed: args.seed,
        thresholds: threshold_grid(lo, 6.0, 0.05),
        sweep_thresholds: sweep,
        cases,
    };
    let dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("reproduce").join(&args.figure));
    prepare_dir(&dir)?;
    artifacts::write_json(&dir.join("plan.json"), &plan)?;
    let mut manifest = RunManifest::begin(&dir, &format!("reproduce {}", args.figure), &plan.hash(), args.seed)?;
    match reproduce_into(&plan, &dir, args) {
        Ok(()) => {
            manifest.finish(&dir, RunStatus::Complete)?;
            say!("wrote {}", dir.display());
            Ok(())
        }
        Err(e) => {
            manifest.notes.push(e.to_string());
            let status = match e {
                CliError::Numerical(_) => RunStatus::TruncationBreach,
                CliError::Validation(_) => RunStatus::Failed,
            };
            manifest.finish(&dir, status)?;
            Err(e)
        }
    }
}

fn reproduce_into(plan: &Plan, dir: &Path, args: &ReproduceArgs) -> Result<(), CliError> {
    let mut results = Vec::with_capacity(plan.cases.len());
    for case in &plan.cases {
        results.push(run_case(case, plan, args.threads)?);
    }
    let summaries: Vec<(&str, &MetricsSummary)> = results.iter().map(|r| (r.case.label.as_str(), &r.best)).collect();
    artifacts::write_json(&dir.join("summaries.json"), &summaries)?;

    match plan.figure.as_str() {
        "fig3a" => {
            let mut w = artifacts::create(&dir.join("fig3a.csv"))?;
            writeln!(
                w,
                "model,N,g_z,y_thr,tau_m,eta,eta_std_err,gamma_dark,gamma_dark_std_err,gamma_dark_method,gamma_dark_is_bound,fidelity,fidelity_std_err,time_unit"
            )?;
            for r in &results {
                let d = &r.case.detector;
                let b = &r.best;
                writeln!(
                    w,
                    "{},{},{:.6},{:.4},{:.6},{:.6},{:.6},{:.6e},{:.6e},{},{},{:.6},{:.6},{}",
                    if d.is_dispersive() { "dispersive" } else { "ideal" },
                    d.n_absorbers,
                    d.g_z(),
                    b.y_thr,
                    b.tau_m,
                    b.eta,
                    b.eta_std_err,
                    b.gamma_dark,
                    b.gamma_dark_std_err,
                    serde_json::to_value(b.method_dark).unwrap().as_str().unwrap_or(""),
                    b.gamma_dark_is_bound,
                    b.fidelity,
                    b.fidelity_std_err,
                    d.time_unit.suffix()
                )?;
            }
            w.flush()?;
        }
        "fig3b" => {
            let roc = results[0]
                .output
                .analysis
                .profiles()
                .roc_curve(&plan.thresholds)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            write_roc_csv(artifacts::create(&dir.join("fig3b.csv"))?, &roc)?;
        }
        "fig4a" => {
            let mut w = artifacts::create(&dir.join("fig4a.csv"))?;
            writeln!(w, "N,y_thr,bin_center,density")?;
            for r in &results {
                let h = histogram_at(&r.output.analysis, r.best.y_thr, r.case.histogram_bin_width)?;
                for (c, d) in h.centers.iter().zip(&h.density) {
                    writeln!(
                        w,
                        "{},{:.4},{:.9e},{:.12e}",
                        r.case.detector.n_absorbers,
                        r.best.y_thr,
                        c - args.time_offset,
                        d
                    )?;
                }
            }
            w.flush()?;
        }
        "fig4b" => {
            let r = &results[0];
            let hists = plan
                .sweep_thresholds
                .iter()
                .map(|&y| histogram_at(&r.output.analysis, y, r.case.histogram_bin_width).map(|h| (y, h)))
                .collect::<Result<Vec<_>, _>>()?;
            write_histograms(artifacts::create(&dir.join("fig4b.csv"))?, &hists, args.time_offset)?;
        }
        _ => unreachable!("figure validated above"),
    }
    if plan.figure.starts_with("fig4") {
        let case = &plan.cases[0];
        let shape = photon_shape(&case.detector, &case.grid);
        write_series_csv(
            artifacts::create(&dir.join("photon_shape.csv"))?,
            "flux",
            case.grid.record_dt(),
            &shape,
        )?;
    }
    Ok(())
}
