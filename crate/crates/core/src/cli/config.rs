//! TOML experiment configuration. Every physical key names its unit: ideal-model
//! quantities are `*_in_kB_units`, dispersive ones `*_over_2pi_MHz` (rates) and `*_us`
//! (times).

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::experiment::RunSettings;
use crate::integrator::{SolverChoice, TimeGrid};
use crate::model::{default_dim_a, DetectorConfig, DispersiveParams, TimeUnit, Truncation, Variant};
use crate::optimizer::{Objective, OptimizationProblem, SurrogateSettings};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RawDetector {
    /// `ideal` or `dispersive`.
    pub model: Option<String>,
    pub n_absorbers: Option<usize>,
    pub eta_h: Option<f64>,
    pub with_photon: Option<bool>,

    pub kappa_A_in_kB_units: Option<f64>,
    pub kappa_C_in_kB_units: Option<f64>,
    pub g_z_in_kB_units: Option<f64>,
    pub deltas_in_kB_units: Option<Vec<f64>>,

    pub kappa_A_over_2pi_MHz: Option<f64>,
    pub kappa_B_over_2pi_MHz: Option<f64>,
    pub kappa_C_over_2pi_MHz: Option<f64>,
    pub chi_over_2pi_MHz: Option<f64>,
    pub alpha: Option<f64>,
    pub delta_plus_over_2pi_MHz: Option<f64>,
    pub deltas_over_2pi_MHz: Option<Vec<f64>>,
    pub T1_us: Option<f64>,
    pub T2_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RawTruncation {
    pub dim_A: Option<usize>,
    pub dim_B: Option<usize>,
    pub dim_C: Option<usize>,
    /// Cap on the total excitation number of C and the absorbers; 0 disables it.
    pub excitation_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RawGrid {
    pub t_end_in_kB_units: Option<f64>,
    pub dt_in_kB_units: Option<f64>,
    pub t_end_us: Option<f64>,
    pub dt_us: Option<f64>,
    pub record_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RawRun {
    pub n_traj: Option<usize>,
    pub base_seed: Option<u64>,
    /// `auto`, `pure` or `mixed`.
    pub solver: Option<String>,
    pub signal: Option<bool>,
    pub vacuum: Option<bool>,
    pub threads: Option<usize>,
    pub noise_oversampling: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RawDetection {
    pub threshold: Option<f64>,
    pub thresholds: Option<Vec<f64>>,
    pub threshold_min: Option<f64>,
    pub threshold_max: Option<f64>,
    pub threshold_step: Option<f64>,
    pub window_in_kB_units: Option<f64>,
    pub window_us: Option<f64>,
    pub histogram_bin_width_in_kB_units: Option<f64>,
    pub histogram_bin_width_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RawOutput {
    pub directory: Option<PathBuf>,
    /// `binary` or `csv`.
    pub current_format: Option<String>,
    pub write_currents: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RawOptimize {
    /// `surrogate` or `full_fidelity`.
    pub objective: Option<String>,
    pub optimize_deltas: Option<bool>,
    pub optimize_g_z: Option<bool>,
    pub delta_bound_in_kB_units: Option<f64>,
    pub g_z_min_in_kB_units: Option<f64>,
    pub g_z_max_in_kB_units: Option<f64>,
    pub max_evaluations: Option<usize>,
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RawConfig {
    pub detector: Option<RawDetector>,
    pub truncation: Option<RawTruncation>,
    pub grid: Option<RawGrid>,
    pub run: Option<RawRun>,
    pub detection: Option<RawDetection>,
    pub output: Option<RawOutput>,
    pub optimize: Option<RawOptimize>,
}

/// Field-level validation failures.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssues(pub Vec<String>);

impl std::fmt::Display for ConfigIssues {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, issue) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurrentFormat {
    Binary,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub n_traj: usize,
    pub base_seed: u64,
    pub solver: SolverChoice,
    pub signal: bool,
    pub vacuum: bool,
    pub noise_oversampling: usize,
    /// Worker count; excluded from the configuration hash since results do not depend on it.
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSection {
    pub thresholds: Vec<f64>,
    /// Fixed measurement window; chosen by fidelity when absent.
    pub window: Option<f64>,
    pub histogram_bin_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    /// Where artifacts go; excluded from the configuration hash like the worker count.
    #[serde(skip)]
    pub directory: PathBuf,
    pub current_format: CurrentFormat,
    pub write_currents: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeSection {
    pub full_fidelity: bool,
    pub optimize_deltas: bool,
    pub optimize_g_z: bool,
    pub delta_bound: f64,
    pub g_z_bounds: (f64, f64),
    pub max_evaluations: usize,
    pub restarts: usize,
    pub seed: u64,
    pub tolerance: f64,
}

/// Validated configuration in model units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub detector: DetectorConfig,
    pub grid: TimeGrid,
    pub run: RunSection,
    pub detection: DetectionSection,
    pub output: OutputSection,
    pub optimize: Option<OptimizeSection>,
}

fn mhz(v: f64) -> f64 {
    2.0 * PI * v
}

struct Checker {
    issues: Vec<String>,
}

impl Checker {
    fn issue(&mut self, key: &str, msg: impl std::fmt::Display) {
        self.issues.push(format!("{key}: {msg}"));
    }

    fn require<T: Clone>(&mut self, key: &str, v: &Option<T>) -> Option<T> {
        if v.is_none() {
            self.issue(key, "missing");
        }
        v.clone()
    }

    fn positive(&mut self, key: &str, v: Option<f64>) -> Option<f64> {
        match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => {
                self.issue(key, format!("must be positive and finite (got {x})"));
                None
            }
            other => other,
        }
    }

    fn non_negative(&mut self, key: &str, v: Option<f64>) -> Option<f64> {
        match v {
            Some(x) if !(x >= 0.0 && x.is_finite()) => {
                self.issue(key, format!("must be non-negative and finite (got {x})"));
                None
            }
            other => other,
        }
    }

    fn forbid<T>(&mut self, key: &str, v: &Option<T>, why: &str) {
        if v.is_some() {
            self.issue(key, why);
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigIssues> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigIssues(vec![e.to_string()]))?;
        Self::from_raw(&raw)
    }

    /// Validates every section and reports all problems at once.
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigIssues> {
        let mut c = Checker { issues: Vec::new() };
        let det = raw.detector.clone().unwrap_or_default();
        if raw.detector.is_none() {
            c.issue("detector", "section missing");
        }
        let model = det.model.clone().unwrap_or_else(|| "ideal".into());
        let dispersive = match model.as_str() {
            "ideal" => false,
            "dispersive" => true,
            other => {
                c.issue("detector.model", format!("expected `ideal` or `dispersive` (got `{other}`)"));
                false
            }
        };
        let detector = if dispersive {
            dispersive_detector(&mut c, &det)
        } else {
            ideal_detector(&mut c, &det)
        };

        let trunc = raw.truncation.clone().unwrap_or_default();
        let n = detector.as_ref().map_or(1, |d| d.n_absorbers);
        let truncation = Truncation {
            dim_a: trunc.dim_A.unwrap_or_else(|| default_dim_a(n, dispersive)),
            dim_b: trunc.dim_B.unwrap_or(2),
            dim_c: trunc.dim_C.unwrap_or(2),
            excitation_cap: match trunc.excitation_cap {
                Some(0) => None,
                Some(k) => Some(k),
                None => Some(1),
            },
        };

        let grid = grid_section(&mut c, raw.grid.clone().unwrap_or_default(), dispersive);
        let run = run_section(&mut c, raw.run.clone().unwrap_or_default());
        let detection = detection_section(&mut c, raw.detection.clone().unwrap_or_default(), dispersive, grid.as_ref());
        let output = output_section(&mut c, raw.output.clone().unwrap_or_default());
        let optimize = raw
            .optimize
            .as_ref()
            .map(|o| optimize_section(&mut c, o, detector.as_ref()));

        let detector = detector.map(|mut d| {
            d.truncation = truncation;
            d
        });
        if let Some(d) = &detector {
            if let Err(e) = d.validate() {
                c.issue("detector", e);
            }
            if let Some(g) = &grid {
                if let Err(e) = g.check_stability(d.max_rate()) {
                    c.issue("grid.dt", e);
                }
            }
        }
        if !c.issues.is_empty() {
            return Err(ConfigIssues(c.issues));
        }
        Ok(Self {
            detector: detector.unwrap(),
            grid: grid.unwrap(),
            run: run.unwrap(),
            detection: detection.unwrap(),
            output: output.unwrap(),
            optimize: optimize.flatten(),
        })
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            grid: self.grid,
            n_traj: self.run.n_traj,
            base_seed: self.run.base_seed,
            solver: self.run.solver,
            workers: self.run.threads,
            noise_oversampling: self.run.noise_oversampling,
        }
    }

    /// Canonical JSON of the resolved configuration (worker count excluded).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn time_unit(&self) -> TimeUnit {
        self.detector.time_unit
    }

    pub fn optimization_problem(&self) -> Option<OptimizationProblem> {
        let o = self.optimize.as_ref()?;
        let objective = if o.full_fidelity {
            Objective::FullFidelity {
                settings: self.settings(),
                thresholds: self.detection.thresholds.clone(),
            }
        } else {
            Objective::Surrogate(SurrogateSettings::default())
        };
        Some(OptimizationProblem {
            base: self.detector.clone(),
            optimize_deltas: o.optimize_deltas,
            optimize_g_z: o.optimize_g_z,
            delta_bound: o.delta_bound,
            g_z_bounds: o.g_z_bounds,
            objective,
            max_evaluations: o.max_evaluations,
            restarts: o.restarts,
            seed: o.seed,
            tolerance: o.tolerance,
        })
    }
}

const IDEAL_ONLY: &str = "only valid for the ideal model (keys in κ_B units)";
const DISPERSIVE_ONLY: &str = "only valid for the dispersive model (keys in 2π·MHz / μs)";

fn ideal_detector(c: &mut Checker, d: &RawDetector) -> Option<DetectorConfig> {
    c.forbid("detector.kappa_A_over_2pi_MHz", &d.kappa_A_over_2pi_MHz, DISPERSIVE_ONLY);
    c.forbid("detector.kappa_B_over_2pi_MHz", &d.kappa_B_over_2pi_MHz, DISPERSIVE_ONLY);
    c.forbid("detector.kappa_C_over_2pi_MHz", &d.kappa_C_over_2pi_MHz, DISPERSIVE_ONLY);
    c.forbid("detector.chi_over_2pi_MHz", &d.chi_over_2pi_MHz, DISPERSIVE_ONLY);
    c.forbid("detector.alpha", &d.alpha, DISPERSIVE_ONLY);
    c.forbid("detector.delta_plus_over_2pi_MHz", &d.delta_plus_over_2pi_MHz, DISPERSIVE_ONLY);
    c.forbid("detector.deltas_over_2pi_MHz", &d.deltas_over_2pi_MHz, DISPERSIVE_ONLY);
    c.forbid("detector.T1_us", &d.T1_us, DISPERSIVE_ONLY);
    c.forbid("detector.T2_us", &d.T2_us, DISPERSIVE_ONLY);

    let deltas = c.require("detector.deltas_in_kB_units", &d.deltas_in_kB_units);
    let g_z = c.require("detector.g_z_in_kB_units", &d.g_z_in_kB_units);
    let g_z = c.non_negative("detector.g_z_in_kB_units", g_z);
    let kappa_a = c.positive("detector.kappa_A_in_kB_units", Some(d.kappa_A_in_kB_units.unwrap_or(0.2)));
    let kappa_c = c.non_negative("detector.kappa_C_in_kB_units", Some(d.kappa_C_in_kB_units.unwrap_or(0.1)));
    let deltas = check_deltas(c, "detector.deltas_in_kB_units", d.n_absorbers, deltas);
    let eta = d.eta_h.unwrap_or(1.0);
    let mut cfg = DetectorConfig::ideal(g_z?, deltas?);
    cfg.kappa_a = kappa_a?;
    cfg.kappa_c = kappa_c?;
    cfg.eta_h = eta;
    cfg.with_photon = d.with_photon.unwrap_or(true);
    Some(cfg)
}

fn dispersive_detector(c: &mut Checker, d: &RawDetector) -> Option<DetectorConfig> {
    c.forbid("detector.kappa_A_in_kB_units", &d.kappa_A_in_kB_units, IDEAL_ONLY);
    c.forbid("detector.kappa_C_in_kB_units", &d.kappa_C_in_kB_units, IDEAL_ONLY);
    c.forbid("detector.g_z_in_kB_units", &d.g_z_in_kB_units, IDEAL_ONLY);
    c.forbid("detector.deltas_in_kB_units", &d.deltas_in_kB_units, IDEAL_ONLY);

    let ka = c.require("detector.kappa_A_over_2pi_MHz", &d.kappa_A_over_2pi_MHz);
    let kb = c.require("detector.kappa_B_over_2pi_MHz", &d.kappa_B_over_2pi_MHz);
    let kc = c.require("detector.kappa_C_over_2pi_MHz", &d.kappa_C_over_2pi_MHz);
    let chi = c.require("detector.chi_over_2pi_MHz", &d.chi_over_2pi_MHz);
    let alpha = c.require("detector.alpha", &d.alpha);
    let deltas = c.require("detector.deltas_over_2pi_MHz", &d.deltas_over_2pi_MHz);
    let ka = c.positive("detector.kappa_A_over_2pi_MHz", ka);
    let kb = c.non_negative("detector.kappa_B_over_2pi_MHz", kb);
    let kc = c.non_negative("detector.kappa_C_over_2pi_MHz", kc);
    let t1 = c.positive("detector.T1_us", d.T1_us);
    let t2 = c.positive("detector.T2_us", d.T2_us);
    let deltas = check_deltas(c, "detector.deltas_over_2pi_MHz", d.n_absorbers, deltas);
    Some(DetectorConfig {
        n_absorbers: deltas.as_ref()?.len(),
        kappa_a: mhz(ka?),
        kappa_b: mhz(kb?),
        kappa_c: mhz(kc?),
        deltas: deltas?.into_iter().map(mhz).collect(),
        eta_h: d.eta_h.unwrap_or(1.0),
        variant: Variant::Dispersive(DispersiveParams {
            chi: mhz(chi?),
            alpha: alpha?,
            delta_plus: mhz(d.delta_plus_over_2pi_MHz.unwrap_or(0.0)),
            t1,
            t2,
        }),
        truncation: Truncation::default(),
        with_photon: d.with_photon.unwrap_or(true),
        time_unit: TimeUnit::Microsecond,
    })
}

fn check_deltas(c: &mut Checker, key: &str, n: Option<usize>, deltas: Option<Vec<f64>>) -> Option<Vec<f64>> {
    let deltas = deltas?;
    if deltas.is_empty() {
        c.issue(key, "needs at least one absorber");
        return None;
    }
    if let Some(n) = n {
        if n != deltas.len() {
            c.issue(key, format!("has {} entries but n_absorbers = {n}", deltas.len()));
            return None;
        }
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        c.issue(key, "entries must be finite");
        return None;
    }
    Some(deltas)
}

fn time_value(
    c: &mut Checker,
    section: &str,
    base: &str,
    ideal: Option<f64>,
    micro: Option<f64>,
    dispersive: bool,
) -> Option<f64> {
    let (ik, mk) = (format!("{section}.{base}_in_kB_units"), format!("{section}.{base}_us"));
    if dispersive {
        c.forbid(&ik, &ideal, IDEAL_ONLY);
        micro
    } else {
        c.forbid(&mk, &micro, DISPERSIVE_ONLY);
        ideal
    }
}

fn grid_section(c: &mut Checker, g: RawGrid, dispersive: bool) -> Option<TimeGrid> {
    let t_end = time_value(c, "grid", "t_end", g.t_end_in_kB_units, g.t_end_us, dispersive);
    let dt = time_value(c, "grid", "dt", g.dt_in_kB_units, g.dt_us, dispersive);
    let unit = if dispersive { "us" } else { "in_kB_units" };
    let t_end = c.require(&format!("grid.t_end_{unit}"), &t_end);
    let dt = c.require(&format!("grid.dt_{unit}"), &dt);
    let t_end = c.positive(&format!("grid.t_end_{unit}"), t_end);
    let dt = c.positive(&format!("grid.dt_{unit}"), dt);
    match TimeGrid::with_stride(t_end?, dt?, g.record_stride.unwrap_or(10)) {
        Ok(grid) => Some(grid),
        Err(e) => {
            c.issue("grid", e);
            None
        }
    }
}

fn run_section(c: &mut Checker, r: RawRun) -> Option<RunSection> {
    let n_traj = r.n_traj.unwrap_or(2000);
    if n_traj == 0 {
        c.issue("run.n_traj", "must be at least 1");
    }
    let solver = match r.solver.as_deref().unwrap_or("auto") {
        "auto" => Some(SolverChoice::Auto),
        "pure" => Some(SolverChoice::Pure),
        "mixed" => Some(SolverChoice::Mixed),
        other => {
            c.issue("run.solver", format!("expected auto, pure or mixed (got `{other}`)"));
            None
        }
    };
    let oversampling = r.noise_oversampling.unwrap_or(1);
    if oversampling == 0 {
        c.issue("run.noise_oversampling", "must be at least 1");
    }
    if r.threads == Some(0) {
        c.issue("run.threads", "must be at least 1");
    }
    let (signal, vacuum) = (r.signal.unwrap_or(true), r.vacuum.unwrap_or(true));
    if !signal && !vacuum {
        c.issue("run", "at least one of `signal` and `vacuum` must be enabled");
    }
    (n_traj > 0 && oversampling > 0).then_some(())?;
    Some(RunSection {
        n_traj,
        base_seed: r.base_seed.unwrap_or(1),
        solver: solver?,
        signal,
        vacuum,
        noise_oversampling: oversampling,
        threads: r.threads.filter(|&t| t > 0),
    })
}

fn detection_section(c: &mut Checker, d: RawDetection, dispersive: bool, grid: Option<&TimeGrid>) -> Option<DetectionSection> {
    let thresholds = match (&d.threshold, &d.thresholds, d.threshold_min, d.threshold_max) {
        (Some(t), None, None, None) => vec![*t],
        (None, Some(ts), None, None) => ts.clone(),
        (None, None, Some(lo), Some(hi)) => {
            let step = d.threshold_step.unwrap_or(0.05);
            if !(step > 0.0) || hi < lo {
                c.issue("detection.threshold_step", "needs threshold_min ≤ threshold_max and a positive step");
                return None;
            }
            crate::experiment::threshold_grid(lo, hi, step)
        }
        (None, None, None, None) => crate::experiment::threshold_grid(1.0, 6.0, 0.05),
        _ => {
            c.issue(
                "detection",
                "give exactly one of `threshold`, `thresholds`, or `threshold_min`/`threshold_max`",
            );
            return None;
        }
    };
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0)) {
        c.issue("detection.thresholds", "must be a non-empty list of positive values");
        return None;
    }
    let window = time_value(c, "detection", "window", d.window_in_kB_units, d.window_us, dispersive);
    let unit = if dispersive { "us" } else { "in_kB_units" };
    let window = c.positive(&format!("detection.window_{unit}"), window);
    let bin = time_value(
        c,
        "detection",
        "histogram_bin_width",
        d.histogram_bin_width_in_kB_units,
        d.histogram_bin_width_us,
        dispersive,
    );
    let default_bin = grid.map_or(1.0, |g| 20.0 * g.record_dt());
    let bin = c.positive(&format!("detection.histogram_bin_width_{unit}"), Some(bin.unwrap_or(default_bin)))?;
    Some(DetectionSection {
        thresholds,
        window,
        histogram_bin_width: bin,
    })
}

fn output_section(c: &mut Checker, o: RawOutput) -> Option<OutputSection> {
    let format = match o.current_format.as_deref().unwrap_or("binary") {
        "binary" => CurrentFormat::Binary,
        "csv" => CurrentFormat::Csv,
        other => {
            c.issue("output.current_format", format!("expected binary or csv (got `{other}`)"));
            return None;
        }
    };
    Some(OutputSection {
        directory: o.directory.unwrap_or_else(|| PathBuf::from("run")),
        current_format: format,
        write_currents: o.write_currents.unwrap_or(true),
    })
}

fn optimize_section(c: &mut Checker, o: &RawOptimize, det: Option<&DetectorConfig>) -> Option<OptimizeSection> {
    let full = match o.objective.as_deref().unwrap_or("surrogate") {
        "surrogate" => false,
        "full_fidelity" => true,
        other => {
            c.issue("optimize.objective", format!("expected surrogate or full_fidelity (got `{other}`)"));
            return None;
        }
    };
    let det = det?;
    if det.is_dispersive() && !full {
        c.issue("optimize.objective", "the surrogate objective needs the ideal model");
    }
    let bound = c.non_negative("optimize.delta_bound_in_kB_units", Some(o.delta_bound_in_kB_units.unwrap_or(1.0)))?;
    let g_lo = o.g_z_min_in_kB_units.unwrap_or(0.0);
    let g_hi = o.g_z_max_in_kB_units.unwrap_or(2.0);
    if g_lo > g_hi || g_lo < 0.0 {
        c.issue("optimize.g_z_min_in_kB_units", "needs 0 ≤ g_z_min ≤ g_z_max");
    }
    let (deltas, g_z) = (o.optimize_deltas.unwrap_or(true), o.optimize_g_z.unwrap_or(false));
    if !deltas && !g_z {
        c.issue("optimize", "nothing to optimize");
    }
    Some(OptimizeSection {
        full_fidelity: full,
        optimize_deltas: deltas,
        optimize_g_z: g_z,
        delta_bound: bound * det.kappa_b,
        g_z_bounds: (g_lo * det.kappa_b, g_hi * det.kappa_b),
        max_evaluations: o.max_evaluations.unwrap_or(400),
        restarts: o.restarts.unwrap_or(2),
        seed: o.seed.unwrap_or(0),
        tolerance: o.tolerance.unwrap_or(1e-6),
    })
}
