//! Matched filtering and threshold detection of homodyne currents.
//!
//! The filter is the unconditional `⟨Y_A⟩(t)` trace rescaled to unit L2 norm, so that
//! white vacuum noise comes out of the filter with unit variance and thresholds read
//! as multiples of the vacuum standard deviation.

use std::io::{self, BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::ExpectationTraces;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("cannot build a filter from an identically zero trace")]
    ZeroTrace,
    #[error("trace `{0}` missing")]
    MissingTrace(String),
    #[error("sample spacing mismatch: signal dt {signal}, filter dt {filter}")]
    DtMismatch { signal: f64, filter: f64 },
    #[error("threshold must be positive (got {0})")]
    InvalidThreshold(f64),
    #[error("detection window [{0}, {1}] contains no samples")]
    EmptyWindow(f64, f64),
    #[error("histogram bin width must be positive (got {0})")]
    InvalidBinWidth(f64),
}

/// Unit-L2-norm filter kernel, `Σ f_k² dt = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedFilter {
    pub samples: Vec<f64>,
    pub dt: f64,
}

impl MatchedFilter {
    pub fn from_samples(samples: &[f64], dt: f64) -> Result<Self, DetectionError> {
        let norm = (samples.iter().map(|v| v * v).sum::<f64>() * dt).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(DetectionError::ZeroTrace);
        }
        Ok(Self {
            samples: samples.iter().map(|v| v / norm).collect(),
            dt,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time after which the filter holds all but `tail` of its energy.
    pub fn fill_time(&self, tail: f64) -> f64 {
        let mut acc = 0.0;
        for (k, v) in self.samples.iter().enumerate() {
            acc += v * v * self.dt;
            if acc >= 1.0 - tail {
                return (k + 1) as f64 * self.dt;
            }
        }
        self.samples.len() as f64 * self.dt
    }
}

/// Filter proportional to the unconditional `⟨Y_A⟩` trace.
pub fn build_filter(traces: &ExpectationTraces) -> Result<MatchedFilter, DetectionError> {
    let y = traces
        .get("Y_A")
        .ok_or_else(|| DetectionError::MissingTrace("Y_A".into()))?;
    MatchedFilter::from_samples(y, traces.dt)
}

fn same_dt(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Causal convolution `J̄_k = Σ_{j≤k} J_j f_{k−j} dt`, truncated to the record.
pub fn filter_signal(j: &[f64], dt: f64, f: &MatchedFilter) -> Result<Vec<f64>, DetectionError> {
    Convolver::new(f, j.len(), dt)?.apply(j)
}

/// Reusable FFT convolution for many records of the same length.
pub struct Convolver {
    len: usize,
    fft_len: usize,
    kernel: Vec<C64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Convolver {
    pub fn new(f: &MatchedFilter, len: usize, dt: f64) -> Result<Self, DetectionError> {
        if !same_dt(dt, f.dt) {
            return Err(DetectionError::DtMismatch {
                signal: dt,
                filter: f.dt,
            });
        }
        let fft_len = (2 * len).max(2).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let mut kernel = vec![C64::new(0.0, 0.0); fft_len];
        for (k, v) in f.samples.iter().take(len).enumerate() {
            kernel[k] = C64::new(v * dt / fft_len as f64, 0.0);
        }
        forward.process(&mut kernel);
        Ok(Self {
            len,
            fft_len,
            kernel,
            forward,
            inverse,
        })
    }

    pub fn apply(&self, j: &[f64]) -> Result<Vec<f64>, DetectionError> {
        assert_eq!(j.len(), self.len, "record length differs from the planned length");
        let mut buf = vec![C64::new(0.0, 0.0); self.fft_len];
        for (b, v) in buf.iter_mut().zip(j) {
            b.re = *v;
        }
        self.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel) {
            *b *= k;
        }
        self.inverse.process(&mut buf);
        Ok(buf[..self.len].iter().map(|c| c.re).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub clicked: bool,
    /// First upward threshold crossing, if any.
    pub tau_c: Option<f64>,
    pub max_filtered: f64,
}

/// Click test `max J̄ > Y_thr` over an optional time window `[t_a, t_b]`.
pub fn detect(
    jbar: &[f64],
    dt: f64,
    y_thr: f64,
    window: Option<(f64, f64)>,
) -> Result<DetectionResult, DetectionError> {
    if !(y_thr > 0.0) {
        return Err(DetectionError::InvalidThreshold(y_thr));
    }
    let (lo, hi) = match window {
        Some((a, b)) => {
            let lo = (a / dt - 1e-9).ceil().max(0.0) as usize;
            let hi = ((b / dt + 1e-9).floor() as usize + 1).min(jbar.len());
            if lo >= hi {
                return Err(DetectionError::EmptyWindow(a, b));
            }
            (lo, hi)
        }
        None if jbar.is_empty() => return Err(DetectionError::EmptyWindow(0.0, 0.0)),
        None => (0, jbar.len()),
    };
    let slice = &jbar[lo..hi];
    let max_filtered = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tau_c = slice
        .iter()
        .position(|&v| v > y_thr)
        .map(|k| (lo + k) as f64 * dt);
    Ok(DetectionResult {
        clicked: tau_c.is_some(),
        tau_c,
        max_filtered,
    })
}

/// Running record highs of a filtered trace: the sample times at which `J̄` exceeds every
/// earlier value. The first crossing of any threshold is the first high above it, so one
/// profile answers detection queries for a whole threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingProfile {
    highs: Vec<(f64, f64)>,
}

impl CrossingProfile {
    pub fn new(jbar: &[f64], dt: f64) -> Self {
        let mut highs = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for (k, &v) in jbar.iter().enumerate() {
            if v > best {
                best = v;
                highs.push((k as f64 * dt, v));
            }
        }
        Self { highs }
    }

    pub fn max(&self) -> f64 {
        self.highs.last().map_or(f64::NEG_INFINITY, |h| h.1)
    }

    pub fn first_crossing(&self, y_thr: f64) -> Option<f64> {
        let k = self.highs.partition_point(|h| h.1 <= y_thr);
        self.highs.get(k).map(|h| h.0)
    }

    /// Click within `[0, window]`.
    pub fn clicks_within(&self, y_thr: f64, window: f64) -> bool {
        self.first_crossing(y_thr).is_some_and(|t| t <= window + 1e-9)
    }

    pub fn result(&self, y_thr: f64) -> DetectionResult {
        let tau_c = self.first_crossing(y_thr);
        DetectionResult {
            clicked: tau_c.is_some(),
            tau_c,
            max_filtered: self.max(),
        }
    }
}

/// Normalized histogram of crossing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
    pub n_clicks: usize,
}

impl Histogram {
    /// True when no trajectory clicked.
    pub fn is_empty(&self) -> bool {
        self.n_clicks == 0
    }

    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width
    }

    /// `bin_center,density` rows, with `time_offset` subtracted from the centers.
    pub fn write_csv<W: Write>(&self, mut w: W, time_offset: f64) -> io::Result<()> {
        writeln!(w, "bin_center,density")?;
        for (c, d) in self.centers.iter().zip(&self.density) {
            writeln!(w, "{:.9e},{:.12e}", c - time_offset, d)?;
        }
        Ok(())
    }
}

pub fn crossing_histogram(results: &[DetectionResult], bin_width: f64) -> Result<Histogram, DetectionError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(DetectionError::InvalidBinWidth(bin_width));
    }
    let taus: Vec<f64> = results.iter().filter_map(|r| r.tau_c).collect();
    if taus.is_empty() {
        return Ok(Histogram {
            bin_width,
            centers: Vec::new(),
            density: Vec::new(),
            n_clicks: 0,
        });
    }
    let bin = |t: f64| (t / bin_width).floor() as i64;
    let lo = taus.iter().map(|&t| bin(t)).min().unwrap();
    let hi = taus.iter().map(|&t| bin(t)).max().unwrap();
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &t in &taus {
        counts[(bin(t) - lo) as usize] += 1;
    }
    let norm = 1.0 / (taus.len() as f64 * bin_width);
    Ok(Histogram {
        bin_width,
        centers: (lo..=hi).map(|b| (b as f64 + 0.5) * bin_width).collect(),
        density: counts.iter().map(|&c| c as f64 * norm).collect(),
        n_clicks: taus.len(),
    })
}

/// Two-column CSV with header `t,<name>`.
pub fn write_series_csv<W: Write>(mut w: W, name: &str, dt: f64, values: &[f64]) -> io::Result<()> {
    writeln!(w, "t,{name}")?;
    for (k, v) in values.iter().enumerate() {
        writeln!(w, "{:.9e},{:.12e}", k as f64 * dt, v)?;
    }
    Ok(())
}

/// Reads a two-column `t,value` CSV; returns the sample spacing and the values.
pub fn read_series_csv<R: BufRead>(r: R) -> io::Result<(f64, Vec<f64>)> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut t = Vec::new();
    let mut v = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(format!("line {}: expected two columns", i + 1)));
        };
        t.push(a.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?);
        v.push(b.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?);
    }
    let dt = if t.len() > 1 { t[1] - t[0] } else { 0.0 };
    Ok((dt, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn direct(j: &[f64], f: &MatchedFilter) -> Vec<f64> {
        (0..j.len())
            .map(|k| (0..=k).map(|i| j[i] * f.samples.get(k - i).copied().unwrap_or(0.0) * f.dt).sum())
            .collect()
    }

    fn pulse(n: usize, dt: f64) -> MatchedFilter {
        let s: Vec<f64> = (0..n).map(|k| {
            let t = k as f64 * dt;
            -t * (-0.3 * t).exp()
        })
        .collect();
        MatchedFilter::from_samples(&s, dt).unwrap()
    }

    #[test]
    fn filter_has_unit_norm() {
        let f = pulse(400, 0.05);
        let e: f64 = f.samples.iter().map(|v| v * v).sum::<f64>() * f.dt;
        assert!((e - 1.0).abs() < 1e-10);
        assert_eq!(
            MatchedFilter::from_samples(&[0.0; 5], 0.1),
            Err(DetectionError::ZeroTrace)
        );
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let f = pulse(300, 0.05);
        let j: Vec<f64> = (0..300).map(|k| ((k * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let fast = filter_signal(&j, 0.05, &f).unwrap();
        for (a, b) in fast.iter().zip(direct(&j, &f)) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn impulse_returns_shifted_filter() {
        let f = pulse(200, 0.05);
        let mut j = vec![0.0; 200];
        j[30] = 1.0;
        let out = filter_signal(&j, 0.05, &f).unwrap();
        assert!(out[..30].iter().all(|v| v.abs() < 1e-12));
        for k in 30..200 {
            assert!((out[k] - f.samples[k - 30] * f.dt).abs() < 1e-12);
        }
        assert!(filter_signal(&vec![0.0; 200], 0.05, &f).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn dt_mismatch_is_rejected() {
        let f = pulse(10, 0.05);
        assert!(matches!(filter_signal(&[0.0; 10], 0.1, &f), Err(DetectionError::DtMismatch { .. })));
    }

    #[test]
    fn filtered_white_noise_has_unit_variance() {
        let dt = 0.05;
        let f = pulse(200, dt);
        let len = 4000;
        let conv = Convolver::new(&f, len, dt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut sum, mut sum2, mut n) = (0.0, 0.0, 0.0);
        for _ in 0..20 {
            let j: Vec<f64> = (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z / dt.sqrt()
                })
                .collect();
            for v in &conv.apply(&j).unwrap()[400..] {
                sum += v;
                sum2 += v * v;
                n += 1.0;
            }
        }
        let var = sum2 / n - (sum / n).powi(2);
        // samples are correlated over ~10 time units; 20·180 independent blocks
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn detection_window_and_crossing() {
        let jbar = [0.0, 1.0, 3.0, 5.0, 2.0, 6.0];
        let r = detect(&jbar, 0.5, 4.0, None).unwrap();
        assert!(r.clicked);
        assert_eq!(r.tau_c, Some(1.5));
        assert_eq!(r.max_filtered, 6.0);
        let r = detect(&jbar, 0.5, 4.0, Some((2.0, 2.5))).unwrap();
        assert_eq!(r.tau_c, Some(2.5));
        assert!(!detect(&jbar, 0.5, f64::INFINITY, None).unwrap().clicked);
        assert!(detect(&jbar, 0.5, 0.0, None).is_err());
        assert!(detect(&jbar, 0.5, 1.0, Some((10.0, 11.0))).is_err());
    }

    #[test]
    fn histogram_of_identical_times_is_one_bin() {
        let r = DetectionResult {
            clicked: true,
            tau_c: Some(3.3),
            max_filtered: 5.0,
        };
        let h = crossing_histogram(&[r; 7], 0.5).unwrap();
        assert_eq!(h.density.len(), 1);
        assert!((h.integral() - 1.0).abs() < 1e-12);
        let none = DetectionResult {
            clicked: false,
            tau_c: None,
            max_filtered: 0.0,
        };
        assert!(crossing_histogram(&[none], 0.5).unwrap().is_empty());
    }

    #[test]
    fn series_csv_round_trip() {
        let mut buf = Vec::new();
        write_series_csv(&mut buf, "J", 0.25, &[1.0, -2.5, 3.125]).unwrap();
        let (dt, v) = read_series_csv(&buf[..]).unwrap();
        assert_eq!(dt, 0.25);
        assert_eq!(v, vec![1.0, -2.5, 3.125]);
    }

    proptest! {
        #[test]
        fn profile_agrees_with_detect(vals in prop::collection::vec(-5.0f64..5.0, 1..60), thr in 0.01f64..5.0) {
            let p = CrossingProfile::new(&vals, 0.1);
            let d = detect(&vals, 0.1, thr, None).unwrap();
            prop_assert_eq!(p.result(thr), d);
        }

        #[test]
        fn click_set_shrinks_with_threshold(
            vals in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..30), 1..20),
            lo in 0.01f64..3.0, step in 0.0f64..3.0,
        ) {
            for v in &vals {
                let hi_click = detect(v, 0.1, lo + step, None).unwrap().clicked;
                let lo_click = detect(v, 0.1, lo, None).unwrap().clicked;
                prop_assert!(!hi_click || lo_click);
            }
        }

        #[test]
        fn filtering_commutes_with_scaling(
            vals in prop::collection::vec(-5.0f64..5.0, 8..40), c in 0.01f64..100.0,
        ) {
            let f = pulse(vals.len(), 0.1);
            let a = filter_signal(&vals, 0.1, &f).unwrap();
            let scaled: Vec<f64> = vals.iter().map(|v| c * v).collect();
            let b = filter_signal(&scaled, 0.1, &f).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((c * x - y).abs() < 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn histogram_integrates_to_one(taus in prop::collection::vec(0.0f64..100.0, 1..50), bw in 0.1f64..10.0) {
            let rs: Vec<DetectionResult> = taus
                .iter()
                .map(|&t| DetectionResult { clicked: true, tau_c: Some(t), max_filtered: 1.0 })
                .collect();
            let h = crossing_histogram(&rs, bw).unwrap();
            prop_assert!((h.integral() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn filter_ignores_trace_scale(c in 0.001f64..1000.0) {
            let f = pulse(50, 0.1);
            let g = MatchedFilter::from_samples(&f.samples.iter().map(|v| c * v).collect::<Vec<_>>(), 0.1).unwrap();
            for (a, b) in f.samples.iter().zip(&g.samples) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
