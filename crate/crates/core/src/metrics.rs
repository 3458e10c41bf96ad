//! Efficiency, dark-count rate, measurement window, fidelity and ROC curves.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{CrossingProfile, DetectionResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no detection results")]
    EmptyResults,
    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),
    #[error("record length must be positive (got {0})")]
    InvalidRecordLength(f64),
    #[error("grid and values differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("not enough stationary vacuum samples to estimate statistics")]
    InsufficientSamples,
}

/// Value with a one-sigma standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

/// `η = n_click / n_traj` with binomial error.
pub fn efficiency(results: &[DetectionResult]) -> Result<Estimate, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let k = results.iter().filter(|r| r.clicked).count();
    Ok(binomial(k, results.len()))
}

pub fn binomial(k: usize, n: usize) -> Estimate {
    let p = k as f64 / n as f64;
    Estimate {
        value: p,
        std_err: (p * (1.0 - p) / n as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DarkCountMethod {
    Empirical,
    GaussianEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarkCount {
    pub rate: f64,
    pub std_err: f64,
    pub method: DarkCountMethod,
    /// Zero observed clicks: `rate` is the bound `1/(n T)`.
    pub is_bound: bool,
    /// False when the Gaussian-process diagnostics fail.
    pub reliable: bool,
}

/// Clicking vacuum records per unit record time, with Poisson error.
pub fn dark_count_empirical(results: &[DetectionResult], record_length: f64) -> Result<DarkCount, MetricsError> {
    let clicks = results.iter().filter(|r| r.clicked).count();
    dark_count_from_clicks(clicks, results.len(), record_length)
}

pub fn dark_count_from_clicks(clicks: usize, n: usize, record_length: f64) -> Result<DarkCount, MetricsError> {
    if n == 0 {
        return Err(MetricsError::EmptyResults);
    }
    if !(record_length > 0.0) {
        return Err(MetricsError::InvalidRecordLength(record_length));
    }
    let exposure = n as f64 * record_length;
    Ok(DarkCount {
        rate: clicks.max(1) as f64 / exposure,
        std_err: (clicks as f64).sqrt() / exposure,
        method: DarkCountMethod::Empirical,
        is_bound: clicks == 0,
        reliable: true,
    })
}

/// Moments of the filtered vacuum signal over its stationary part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VacuumStatistics {
    pub dt: f64,
    pub n_samples: usize,
    pub mean: f64,
    /// `r(0)`.
    pub variance: f64,
    /// `E[(J̄_{k+1} − J̄_k)²]`, so that `−r″(0) ≈ slope_variance / dt²`.
    pub slope_variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Relative variance difference between the first and second halves of the window.
    pub drift: f64,
}

/// Diagnostics beyond which the Gaussian estimate is flagged unreliable.
const MAX_SKEWNESS: f64 = 0.1;
const MAX_EXCESS_KURTOSIS: f64 = 0.2;
const MAX_DRIFT: f64 = 0.05;

impl VacuumStatistics {
    /// Statistics of the samples from index `start` onward of each filtered record.
    pub fn from_filtered<'a, I>(records: I, dt: f64, start: usize) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut s = [0.0f64; 5];
        let mut halves = [[0.0f64; 3]; 2];
        let mut d2 = 0.0;
        let mut nd = 0usize;
        for rec in records {
            if rec.len() <= start + 1 {
                continue;
            }
            let part = &rec[start..];
            let mid = part.len() / 2;
            for (k, &v) in part.iter().enumerate() {
                let mut p = 1.0;
                for acc in s.iter_mut() {
                    *acc += p;
                    p *= v;
                }
                let h = &mut halves[usize::from(k >= mid)];
                h[0] += 1.0;
                h[1] += v;
                h[2] += v * v;
            }
            for w in part.windows(2) {
                d2 += (w[1] - w[0]).powi(2);
                nd += 1;
            }
        }
        let n = s[0];
        if n < 10.0 || nd == 0 {
            return Err(MetricsError::InsufficientSamples);
        }
        let mean = s[1] / n;
        let m2 = s[2] / n - mean * mean;
        let m3 = s[3] / n - 3.0 * mean * s[2] / n + 2.0 * mean.powi(3);
        let m4 = s[4] / n - 4.0 * mean * s[3] / n + 6.0 * mean * mean * s[2] / n - 3.0 * mean.powi(4);
        let half_var = |h: &[f64; 3]| h[2] / h[0] - (h[1] / h[0]).powi(2);
        let (v1, v2) = (half_var(&halves[0]), half_var(&halves[1]));
        Ok(Self {
            dt,
            n_samples: n as usize,
            mean,
            variance: m2,
            slope_variance: d2 / nd as f64,
            skewness: m3 / m2.powf(1.5),
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
            drift: (v1 - v2).abs() / m2,
        })
    }

    pub fn is_gaussian_stationary(&self) -> bool {
        self.skewness.abs() < MAX_SKEWNESS
            && self.excess_kurtosis.abs() < MAX_EXCESS_KURTOSIS
            && self.drift < MAX_DRIFT
    }
}

/// Rice upcrossing rate of a stationary Gaussian process,
/// `(1/2π) √(−r″(0)/r(0)) exp(−(Y − μ)²/(2 r(0)))`.
pub fn dark_count_gaussian_estimate(stats: &VacuumStatistics, y_thr: f64) -> DarkCount {
    let r0 = stats.variance;
    let lambda2 = stats.slope_variance / (stats.dt * stats.dt);
    let rate = (lambda2 / r0).sqrt() / (2.0 * std::f64::consts::PI)
        * (-(y_thr - stats.mean).powi(2) / (2.0 * r0)).exp();
    DarkCount {
        rate,
        std_err: f64::NAN,
        method: DarkCountMethod::GaussianEstimate,
        is_bound: false,
        reliable: stats.is_gaussian_stationary(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub value: f64,
    /// `Γ_dark τ_m > 1`.
    pub out_of_regime: bool,
}

/// `F = ½(η + 1 − Γ_dark τ_m)`.
pub fn fidelity(eta: f64, gamma_dark: f64, tau_m: f64) -> Fidelity {
    Fidelity {
        value: 0.5 * (eta + 1.0 - gamma_dark * tau_m),
        out_of_regime: gamma_dark * tau_m > 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowChoice {
    pub tau_m: f64,
    pub eta: f64,
    pub fidelity: f64,
}

/// Smallest window whose fidelity is within 10⁻⁴ of the grid maximum.
pub fn choose_window(windows: &[f64], eta: &[f64], gamma_dark: f64) -> Result<WindowChoice, MetricsError> {
    if windows.is_empty() {
        return Err(MetricsError::EmptyGrid("window grid"));
    }
    if windows.len() != eta.len() {
        return Err(MetricsError::LengthMismatch(windows.len(), eta.len()));
    }
    let f: Vec<f64> = windows
        .iter()
        .zip(eta)
        .map(|(&t, &e)| fidelity(e, gamma_dark, t).value)
        .collect();
    let best = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by(|&a, &b| windows[a].total_cmp(&windows[b]));
    let k = order.into_iter().find(|&k| f[k] >= best - 1e-4).unwrap();
    Ok(WindowChoice {
        tau_m: windows[k],
        eta: eta[k],
        fidelity: f[k],
    })
}

/// Uniform window grid `step, 2·step, …` up to `record_length`.
pub fn window_grid(step: f64, record_length: f64) -> Vec<f64> {
    let n = (record_length / step + 1e-9).floor() as usize;
    (1..=n).map(|k| round_significant(k as f64 * step)).collect()
}

/// Rounds to 12 significant digits, dropping accumulated grid roundoff.
pub fn round_significant(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Detection outcomes of a signal and a vacuum ensemble filtered identically.
#[derive(Debug, Clone)]
pub struct EnsembleProfiles<'a> {
    pub signal: &'a [CrossingProfile],
    pub vacuum: &'a [CrossingProfile],
    pub vacuum_stats: Option<&'a VacuumStatistics>,
    /// Length of every record.
    pub record_length: f64,
}

impl EnsembleProfiles<'_> {
    /// Empirical dark-count rate, replaced by the Gaussian estimate when no vacuum
    /// record clicks and statistics are available.
    pub fn dark_count(&self, y_thr: f64) -> Result<DarkCount, MetricsError> {
        let clicks = self.vacuum.iter().filter(|p| p.first_crossing(y_thr).is_some()).count();
        let empirical = dark_count_from_clicks(clicks, self.vacuum.len(), self.record_length)?;
        match (clicks, self.vacuum_stats) {
            (0, Some(stats)) => Ok(dark_count_gaussian_estimate(stats, y_thr)),
            _ => Ok(empirical),
        }
    }

    pub fn clicks_within(&self, y_thr: f64, window: f64) -> usize {
        self.signal.iter().filter(|p| p.clicks_within(y_thr, window)).count()
    }

    /// Full metrics at one threshold, with the window chosen from `windows`.
    pub fn summarize(&self, y_thr: f64, windows: &[f64]) -> Result<MetricsSummary, MetricsError> {
        if self.signal.is_empty() {
            return Err(MetricsError::EmptyResults);
        }
        let dark = self.dark_count(y_thr)?;
        let n = self.signal.len();
        let eta: Vec<f64> = windows
            .iter()
            .map(|&w| self.clicks_within(y_thr, w) as f64 / n as f64)
            .collect();
        let choice = choose_window(windows, &eta, dark.rate)?;
        self.summary_at(y_thr, choice.tau_m, dark)
    }

    /// Metrics at a fixed threshold and window.
    pub fn summary_at(&self, y_thr: f64, tau_m: f64, dark: DarkCount) -> Result<MetricsSummary, MetricsError> {
        let n = self.signal.len();
        if n == 0 {
            return Err(MetricsError::EmptyResults);
        }
        let n_click = self.clicks_within(y_thr, tau_m);
        let eta = binomial(n_click, n);
        let f = fidelity(eta.value, dark.rate, tau_m);
        // The Gaussian estimate has no sampling error; only η's error propagates then.
        let dark_err = if dark.std_err.is_finite() { tau_m * dark.std_err } else { 0.0 };
        Ok(MetricsSummary {
            eta: eta.value,
            eta_std_err: eta.std_err,
            gamma_dark: dark.rate,
            gamma_dark_std_err: dark.std_err,
            gamma_dark_is_bound: dark.is_bound,
            gamma_dark_reliable: dark.reliable,
            tau_m,
            fidelity: f.value,
            fidelity_std_err: 0.5 * (eta.std_err.powi(2) + dark_err.powi(2)).sqrt(),
            out_of_regime: f.out_of_regime,
            y_thr,
            n_traj: n,
            n_click,
            n_vacuum: self.vacuum.len(),
            method_dark: dark.method,
            config_hash: String::new(),
            base_seed: 0,
        })
    }

    /// Threshold on `thresholds` maximizing the fidelity.
    pub fn best_threshold(&self, thresholds: &[f64], windows: &[f64]) -> Result<MetricsSummary, MetricsError> {
        if thresholds.is_empty() {
            return Err(MetricsError::EmptyGrid("threshold grid"));
        }
        let mut best: Option<MetricsSummary> = None;
        for &y in thresholds {
            let s = self.summarize(y, windows)?;
            if best.as_ref().is_none_or(|b| s.fidelity > b.fidelity) {
                best = Some(s);
            }
        }
        Ok(best.unwrap())
    }

    /// `(Y_thr, Γ_dark, η)` for each threshold, with η over the full record.
    pub fn roc_curve(&self, thresholds: &[f64]) -> Result<Vec<RocPoint>, MetricsError> {
        if thresholds.is_empty() {
            return Err(MetricsError::EmptyGrid("threshold grid"));
        }
        if self.signal.is_empty() {
            return Err(MetricsError::EmptyResults);
        }
        thresholds
            .iter()
            .map(|&y| {
                let dark = self.dark_count(y)?;
                let k = self.signal.iter().filter(|p| p.first_crossing(y).is_some()).count();
                Ok(RocPoint {
                    y_thr: y,
                    gamma_dark: dark.rate,
                    eta: k as f64 / self.signal.len() as f64,
                    method: dark.method,
                    is_bound: dark.is_bound,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub y_thr: f64,
    pub gamma_dark: f64,
    pub eta: f64,
    pub method: DarkCountMethod,
    pub is_bound: bool,
}

pub fn write_roc_csv<W: Write>(mut w: W, roc: &[RocPoint]) -> io::Result<()> {
    writeln!(w, "Y_thr,gamma_dark,eta,method")?;
    for p in roc {
        let method = match (p.method, p.is_bound) {
            (DarkCountMethod::GaussianEstimate, _) => "gaussian_estimate",
            (DarkCountMethod::Empirical, true) => "empirical_bound",
            (DarkCountMethod::Empirical, false) => "empirical",
        };
        writeln!(w, "{:.6},{:.9e},{:.9e},{method}", p.y_thr, p.gamma_dark, p.eta)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub eta: f64,
    pub eta_std_err: f64,
    pub gamma_dark: f64,
    pub gamma_dark_std_err: f64,
    pub gamma_dark_is_bound: bool,
    pub gamma_dark_reliable: bool,
    pub tau_m: f64,
    pub fidelity: f64,
    pub fidelity_std_err: f64,
    pub out_of_regime: bool,
    pub y_thr: f64,
    pub n_traj: usize,
    pub n_click: usize,
    pub n_vacuum: usize,
    pub method_dark: DarkCountMethod,
    pub config_hash: String,
    pub base_seed: u64,
}
