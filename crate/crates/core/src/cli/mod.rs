//! Command-line front end: simulate, analyse, optimize and regenerate figure data.

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub mod artifacts;
pub mod config;
mod reproduce;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::detection::{build_filter, crossing_histogram, write_series_csv, Histogram};
use crate::experiment::{self, Analysis, ExperimentError, ExperimentOutput};
use crate::integrator::{ExpectationTraces, TRUNCATION_LIMIT};
use crate::metrics::{write_roc_csv, MetricsSummary};
use crate::optimizer::{optimize, write_log_csv, OptimizationStatus, OptimizerError};
use artifacts::{CurrentSet, RunManifest, RunStatus};
use config::{CurrentFormat, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "pdsim", version, about = "Continuous itinerant-photon detector simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the signal and vacuum ensembles of a configuration and store their currents.
    Simulate(SimulateArgs),
    /// Detection metrics, ROC curve and crossing-time histogram of a stored run.
    Metrics(AnalyseArgs),
    /// ROC curve (dark-count rate against efficiency) of a stored run.
    Roc(AnalyseArgs),
    /// Crossing-time histograms of a stored run.
    Histogram(AnalyseArgs),
    /// Optimize detunings (and optionally the coupling) of a configuration.
    Optimize(SimulateArgs),
    /// Regenerate the data behind one of the standard figures.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyseArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Single detection threshold.
    #[arg(long, conflicts_with = "thresholds")]
    pub threshold: Option<f64>,
    /// Comma-separated threshold list.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Fixed measurement window instead of the fidelity-optimal one.
    #[arg(long)]
    pub window: Option<f64>,
    /// Histogram bin width.
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Subtracted from histogram bin centers.
    #[arg(long, default_value_t = 0.0)]
    pub time_offset: f64,
    /// Output directory; defaults to `<run-dir>/analysis`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// One of fig3a, fig3b, fig4a, fig4b.
    #[arg(long)]
    pub figure: String,
    #[arg(long, default_value_t = 500)]
    pub n_traj: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Thresholds for the fig4b histograms.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub time_offset: f64,
    /// Output directory; defaults to `reproduce/<figure>`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration, flags or input artifacts (exit code 1).
    Validation(String),
    /// Numerical diagnostics failed: truncation breach, unstable state, failed trajectories
    /// (exit code 2).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Model(m) => Self::Validation(m.to_string()),
            other => Self::Numerical(other.to_string()),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Model(_) | OptimizerError::NotIdeal | OptimizerError::Invalid(_) => {
                Self::Validation(e.to_string())
            }
            other => Self::Numerical(other.to_string()),
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Metrics(a) => cmd_analyse(&a, Analyses::ALL),
        Command::Roc(a) => cmd_analyse(&a, Analyses::ROC),
        Command::Histogram(a) => cmd_analyse(&a, Analyses::HISTOGRAM),
        Command::Optimize(a) => cmd_optimize(&a),
        Command::Reproduce(a) => reproduce::cmd_reproduce(&a),
    }
}

/// Reads and validates a configuration, applying command-line overrides.
pub fn load_config(args: &SimulateArgs) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", args.config.display())))?;
    let mut raw: config::RawConfig = toml::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.config.display())))?;
    let run = raw.run.get_or_insert_with(Default::default);
    if let Some(s) = args.seed {
        run.base_seed = Some(s);
    }
    if let Some(n) = args.n_traj {
        run.n_traj = Some(n);
    }
    if let Some(t) = args.threads {
        run.threads = Some(t);
    }
    if let Some(d) = &args.out_dir {
        raw.output.get_or_insert_with(Default::default).directory = Some(d.clone());
    }
    ExperimentConfig::from_raw(&raw).map_err(|issues| {
        CliError::Validation(format!("invalid configuration {}:\n{issues}", args.config.display()))
    })
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let dir = cfg.output.directory.clone();
    prepare_dir(&dir)?;
    let mut manifest = RunManifest::begin(&dir, "simulate", &cfg.hash(), cfg.run.base_seed)?;
    match simulate_into(&cfg, &dir, &mut manifest) {
        Ok(status) => {
            manifest.finish(&dir, status)?;
            if status == RunStatus::TruncationBreach {
                return Err(CliError::Numerical(format!(
                    "truncation breach, see {}:\n  {}",
                    dir.join(artifacts::MANIFEST).display(),
                    manifest.notes.join("\n  ")
                )));
            }
            say!("wrote {}", dir.display());
            Ok(())
        }
        Err(e) => {
            manifest.notes.push(e.to_string());
            manifest.finish(&dir, RunStatus::Failed)?;
            Err(e)
        }
    }
}

fn simulate_into(cfg: &ExperimentConfig, dir: &Path, manifest: &mut RunManifest) -> Result<RunStatus, CliError> {
    fs::write(dir.join(artifacts::CONFIG_JSON), cfg.canonical_json() + "\n")?;
    let settings = cfg.settings();
    let master = experiment::master_traces(&cfg.detector, &settings.grid)?;
    let mut w = artifacts::create(&dir.join(artifacts::ME_TRACES))?;
    master.traces.write_csv(&mut w)?;
    w.flush()?;

    let mut status = RunStatus::Complete;
    if master.top_level_max >= TRUNCATION_LIMIT {
        manifest.notes.push(format!(
            "mean top-level population of mode A peaks at {:.3e} (limit {TRUNCATION_LIMIT:e}); raise truncation.dim_A",
            master.top_level_max
        ));
        status = RunStatus::TruncationBreach;
    }
    let other_warnings = master.warnings.iter().filter(|w| !w.starts_with("measurement-mode truncation"));
    manifest.notes.extend(other_warnings.cloned());

    let mut runs = Vec::new();
    for (name, with_photon, enabled) in [("signal", true, cfg.run.signal), ("vacuum", false, cfg.run.vacuum)] {
        if !enabled {
            continue;
        }
        let run = experiment::run_trajectories(&cfg.detector, &settings, with_photon)?;
        run.require_complete()?;
        let breaches = run.truncation_breaches(TRUNCATION_LIMIT);
        if breaches > 0 {
            manifest.notes.push(format!(
                "{breaches} of {} {name} trajectories end with top-level population ≥ {TRUNCATION_LIMIT:e}",
                run.records.len()
            ));
        }
        if cfg.output.write_currents {
            let set = CurrentSet::from_records(&run.records, settings.grid.record_dt());
            let file = CurrentSet::file_name(name, cfg.output.current_format);
            set.write(&dir.join(file), cfg.output.current_format)?;
        }
        runs.push((name, run));
    }
    let summary: Vec<(&str, &[_])> = runs.iter().map(|(n, r)| (*n, r.records.as_slice())).collect();
    artifacts::write_trajectory_summary(&dir.join(artifacts::TRAJECTORIES), &summary)?;
    Ok(status)
}

/// A stored run loaded back for analysis.
pub struct StoredRun {
    pub config: ExperimentConfig,
    pub analysis: Analysis,
}

pub fn load_run(dir: &Path) -> Result<StoredRun, CliError> {
    let missing = |what: &str| CliError::Validation(format!("{}: missing artifact {what}", dir.display()));
    let manifest = RunManifest::read(dir).map_err(|_| missing(artifacts::MANIFEST))?;
    if manifest.status == RunStatus::Running || manifest.status == RunStatus::Failed {
        return Err(CliError::Validation(format!(
            "{}: run did not complete (status {:?})",
            dir.display(),
            manifest.status
        )));
    }
    let config: ExperimentConfig =
        artifacts::read_json(&dir.join(artifacts::CONFIG_JSON)).map_err(|_| missing(artifacts::CONFIG_JSON))?;
    if config.hash() != manifest.config_hash {
        return Err(CliError::Validation(format!(
            "{}: config.json does not match the manifest hash",
            dir.display()
        )));
    }
    let traces_file = fs::File::open(dir.join(artifacts::ME_TRACES)).map_err(|_| missing(artifacts::ME_TRACES))?;
    let traces = ExpectationTraces::read_csv(io::BufReader::new(traces_file))?;
    let filter = build_filter(&traces).map_err(|e| CliError::Numerical(e.to_string()))?;
    let load = |name: &str| -> Result<CurrentSet, CliError> {
        let candidates = [CurrentFormat::Binary, CurrentFormat::Csv].map(|f| CurrentSet::file_name(name, f));
        let path = artifacts::find_existing(dir, &candidates)
            .into_iter()
            .next()
            .ok_or_else(|| missing(&format!("currents/{name}.*")))?;
        Ok(CurrentSet::read(&path)?)
    };
    let (signal, vacuum) = (load("signal")?, load("vacuum")?);
    if (signal.dt - vacuum.dt).abs() > 1e-12 * signal.dt {
        return Err(CliError::Validation("signal and vacuum currents use different sample spacings".into()));
    }
    let analysis = Analysis::new(filter, &signal.currents, &vacuum.currents, signal.dt)
        .map_err(CliError::from)?;
    Ok(StoredRun { config, analysis })
}

struct Analyses {
    metrics: bool,
    roc: bool,
    histogram: bool,
}

impl Analyses {
    const ALL: Self = Self {
        metrics: true,
        roc: true,
        histogram: true,
    };
    const ROC: Self = Self {
        metrics: false,
        roc: true,
        histogram: false,
    };
    const HISTOGRAM: Self = Self {
        metrics: false,
        roc: false,
        histogram: true,
    };
}

/// Metrics at every threshold, with the fidelity-optimal entry singled out.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub best: MetricsSummary,
    pub per_threshold: Vec<MetricsSummary>,
    pub window_fixed: bool,
    pub time_unit: String,
}

/// Summaries at each threshold plus the fidelity-optimal one.
pub fn metrics_report(
    analysis: &Analysis,
    cfg: &ExperimentConfig,
    thresholds: &[f64],
    window: Option<f64>,
    config_hash: &str,
) -> Result<MetricsReport, CliError> {
    let profiles = analysis.profiles();
    let windows = analysis.windows();
    let numerical = |e: crate::metrics::MetricsError| CliError::Numerical(e.to_string());
    let mut per = Vec::with_capacity(thresholds.len());
    for &y in thresholds {
        let mut s = match window {
            Some(w) => {
                let dark = profiles.dark_count(y).map_err(numerical)?;
                profiles.summary_at(y, w, dark).map_err(numerical)?
            }
            None => profiles.summarize(y, &windows).map_err(numerical)?,
        };
        s.config_hash = config_hash.to_string();
        s.base_seed = cfg.run.base_seed;
        per.push(s);
    }
    let best = per
        .iter()
        .fold(None::<&MetricsSummary>, |b, s| match b {
            Some(b) if b.fidelity >= s.fidelity => Some(b),
            _ => Some(s),
        })
        .cloned()
        .ok_or_else(|| CliError::Validation("empty threshold list".into()))?;
    Ok(MetricsReport {
        best,
        per_threshold: per,
        window_fixed: window.is_some(),
        time_unit: cfg.time_unit().suffix().to_string(),
    })
}

/// Crossing-time histogram at `y_thr` over the full record.
pub fn histogram_at(analysis: &Analysis, y_thr: f64, bin_width: f64) -> Result<Histogram, CliError> {
    let results: Vec<_> = analysis.signal.iter().map(|p| p.result(y_thr)).collect();
    crossing_histogram(&results, bin_width).map_err(|e| CliError::Validation(e.to_string()))
}

/// `y_thr,bin_center,density` rows for several thresholds.
pub fn write_histograms<W: Write>(mut w: W, hists: &[(f64, Histogram)], time_offset: f64) -> io::Result<()> {
    writeln!(w, "y_thr,bin_center,density")?;
    for (y, h) in hists {
        for (c, d) in h.centers.iter().zip(&h.density) {
            writeln!(w, "{y:.6},{:.9e},{:.12e}", c - time_offset, d)?;
        }
    }
    Ok(())
}

fn cmd_analyse(args: &AnalyseArgs, what: Analyses) -> Result<(), CliError> {
    let run = load_run(&args.run_dir)?;
    let cfg = &run.config;
    let thresholds = match (&args.threshold, &args.thresholds) {
        (Some(t), _) => vec![*t],
        (None, Some(ts)) => ts.clone(),
        (None, None) => cfg.detection.thresholds.clone(),
    };
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(CliError::Validation("thresholds must be positive".into()));
    }
    if let Some(w) = args.window {
        if !(w > 0.0) {
            return Err(CliError::Validation("--window must be positive".into()));
        }
    }
    let window = args.window.or(cfg.detection.window);
    let bin_width = args.bin_width.unwrap_or(cfg.detection.histogram_bin_width);
    if !(bin_width > 0.0) {
        return Err(CliError::Validation("--bin-width must be positive".into()));
    }
    let dir = args.out_dir.clone().unwrap_or_else(|| args.run_dir.join("analysis"));
    prepare_dir(&dir)?;
    let hash = cfg.hash();
    let mut manifest = RunManifest::begin(&dir, "analyse", &hash, cfg.run.base_seed)?;
    manifest.notes.push(format!("source run: {}", args.run_dir.display()));

    let report = metrics_report(&run.analysis, cfg, &thresholds, window, &hash)?;
    if what.metrics {
        artifacts::write_json(&dir.join(artifacts::METRICS), &report)?;
        let b = &report.best;
        say!(
            "Y_thr = {:.3}: eta = {:.4} ± {:.4}, Gamma_dark = {:.3e} ({:?}{}), tau_m = {:.2}, F = {:.4} ± {:.4}",
            b.y_thr,
            b.eta,
            b.eta_std_err,
            b.gamma_dark,
            b.method_dark,
            if b.gamma_dark_is_bound { ", upper bound" } else { "" },
            b.tau_m,
            b.fidelity,
            b.fidelity_std_err
        );
    }
    if what.roc {
        let roc = run
            .analysis
            .profiles()
            .roc_curve(&thresholds)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        write_roc_csv(artifacts::create(&dir.join(artifacts::ROC))?, &roc)?;
    }
    if what.histogram {
        let hist_thresholds = if what.metrics { vec![report.best.y_thr] } else { thresholds.clone() };
        let hists = hist_thresholds
            .iter()
            .map(|&y| histogram_at(&run.analysis, y, bin_width).map(|h| (y, h)))
            .collect::<Result<Vec<_>, _>>()?;
        write_histograms(artifacts::create(&dir.join("histogram.csv"))?, &hists, args.time_offset)?;
        let photon = reproduce::photon_shape(&cfg.detector, &cfg.grid);
        write_series_csv(artifacts::create(&dir.join("photon_shape.csv"))?, "flux", cfg.grid.record_dt(), &photon)?;
    }
    manifest.finish(&dir, RunStatus::Complete)?;
    say!("wrote {}", dir.display());
    Ok(())
}

fn cmd_optimize(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let problem = cfg
        .optimization_problem()
        .ok_or_else(|| CliError::Validation("configuration has no [optimize] section".into()))?;
    let dir = cfg.output.directory.clone();
    prepare_dir(&dir)?;
    fs::write(dir.join(artifacts::CONFIG_JSON), cfg.canonical_json() + "\n")?;
    let mut manifest = RunManifest::begin(&dir, "optimize", &cfg.hash(), cfg.run.base_seed)?;
    let result = match optimize(&problem) {
        Ok(r) => r,
        Err(e) => {
            manifest.notes.push(e.to_string());
            manifest.finish(&dir, RunStatus::Failed)?;
            return Err(e.into());
        }
    };
    write_log_csv(artifacts::create(&dir.join("optimizer_log.csv"))?, &problem, &result.log)?;
    #[derive(serde::Serialize)]
    struct Best<'a> {
        status: OptimizationStatus,
        best_deltas: &'a [f64],
        best_g_z: f64,
        best_score: f64,
        initial_score: f64,
        evaluations: usize,
        time_unit: &'static str,
    }
    artifacts::write_json(
        &dir.join("optimizer_result.json"),
        &Best {
            status: result.status,
            best_deltas: &result.best_deltas,
            best_g_z: result.best_g_z,
            best_score: result.best_score,
            initial_score: result.initial_score,
            evaluations: result.log.len(),
            time_unit: cfg.time_unit().suffix(),
        },
    )?;
    if result.status == OptimizationStatus::Incomplete {
        manifest.notes.push("evaluation budget exhausted before convergence".into());
    }
    manifest.finish(&dir, RunStatus::Complete)?;
    say!(
        "{:?}: deltas = {:?}, g_z = {:.4}, score {:.6} (initial {:.6})",
        result.status, result.best_deltas, result.best_g_z, result.best_score, result.initial_score
    );
    Ok(())
}

/// Runs a full experiment for `cfg`, failing with a numerical error on a truncation breach.
pub(crate) fn checked_experiment(
    cfg: &crate::model::DetectorConfig,
    settings: &experiment::RunSettings,
) -> Result<ExperimentOutput, CliError> {
    let out = experiment::run_experiment(cfg, settings)?;
    if out.master.top_level_max >= TRUNCATION_LIMIT {
        return Err(CliError::Numerical(format!(
            "mean top-level population of mode A peaks at {:.3e} (limit {TRUNCATION_LIMIT:e})",
            out.master.top_level_max
        )));
    }
    Ok(out)
}
