//! Master-equation and homodyne stochastic-master-equation integrators.
//!
//! * [`solve_master`]: unconditional Lindblad evolution (fixed-step RK4).
//! * [`solve_sme_trajectory`]: diffusive homodyne SME on the density matrix
//!   (Euler–Maruyama with trace renormalization), valid for any detection efficiency.
//! * [`solve_sme_pure`]: pure-state unravelling for unit efficiency, where every
//!   unmonitored channel is given its own fictitious diffusive record.
//! * [`run_ensemble`]: parallel, seed-deterministic ensembles of either solver.

mod ensemble;
mod master;
mod record;
mod stochastic;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::hilbert::{HilbertError, SparseMatrix, ZERO};
use crate::model::SystemModel;

pub use ensemble::{derive_seed, run_ensemble, EnsembleOutput, TrajectoryFailure};
pub use master::{lindblad_rhs, solve_master, MasterSolution, TRUNCATION_LIMIT};
pub use record::{ExpectationTraces, TrajectoryRecord};
pub use stochastic::{solve_sme_pure, solve_sme_trajectory, solve_with};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("time step {dt} too large for rate {rate}: rate·dt = {} > {STABILITY_LIMIT}", rate * dt)]
    Unstable { rate: f64, dt: f64 },
    #[error("state validity breach at step {step}: {detail}")]
    StateBreach { step: usize, detail: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("ensemble needs at least one trajectory")]
    EmptyEnsemble,
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

/// Largest allowed `κ_max · dt`.
pub const STABILITY_LIMIT: f64 = 0.02;

/// Uniform time grid. Samples (currents and traces) are recorded once every
/// `record_stride` integration steps; currents are averaged over each record bin.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub dt: f64,
    pub record_stride: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, dt: f64) -> Result<Self, IntegrationError> {
        Self::with_stride(t_end, dt, 1)
    }

    pub fn with_stride(t_end: f64, dt: f64, record_stride: usize) -> Result<Self, IntegrationError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(IntegrationError::InvalidGrid(format!("dt must be positive (got {dt})")));
        }
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(IntegrationError::InvalidGrid(format!(
                "t_end must be non-negative (got {t_end})"
            )));
        }
        if record_stride == 0 {
            return Err(IntegrationError::InvalidGrid("record_stride must be at least 1".into()));
        }
        Ok(Self {
            t_end,
            dt,
            record_stride,
        })
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// Number of recorded samples, `ceil(n_steps / record_stride)`.
    pub fn n_records(&self) -> usize {
        self.n_steps().div_ceil(self.record_stride)
    }

    pub fn record_dt(&self) -> f64 {
        self.dt * self.record_stride as f64
    }

    pub fn record_times(&self) -> Vec<f64> {
        (0..self.n_records())
            .map(|k| k as f64 * self.record_dt())
            .collect()
    }

    /// Same grid with the step divided by `factor` and the stride multiplied by it, so
    /// that record times are unchanged.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            t_end: self.t_end,
            dt: self.dt / factor as f64,
            record_stride: self.record_stride * factor,
        }
    }

    pub fn check_stability(&self, max_rate: f64) -> Result<(), IntegrationError> {
        if max_rate * self.dt > STABILITY_LIMIT * (1.0 + 1e-12) {
            return Err(IntegrationError::Unstable {
                rate: max_rate,
                dt: self.dt,
            });
        }
        Ok(())
    }
}

/// Which trajectory solver an ensemble uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Pure,
    Mixed,
    /// Pure-state unravelling when η_h = 1, density matrix otherwise.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Record conditional `⟨Y_A⟩`, `⟨N_B⟩` and `⟨n_C⟩` traces.
    pub record_traces: bool,
    /// Number of Gaussian draws summed into each Wiener increment. Running with step
    /// `dt` and oversampling 2 reproduces the Brownian path of a run with step `dt/2`.
    pub noise_oversampling: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            record_traces: false,
            noise_oversampling: 1,
        }
    }
}

/// Precomputed sparse pieces of the generator.
pub(crate) struct Generator {
    pub dim: usize,
    /// `-i H - ½ Σ L†L`.
    pub drift: SparseMatrix,
    pub channels: Vec<SparseMatrix>,
    pub monitored: usize,
}

pub(crate) struct Workspace {
    g: Vec<C64>,
    m: Vec<C64>,
    t: Vec<C64>,
    /// `L_k ρ` for the channel requested in [`Generator::lindblad_into`].
    pub kept: Vec<C64>,
}

impl Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            g: vec![ZERO; dim * dim],
            m: vec![ZERO; dim * dim],
            t: vec![ZERO; dim * dim],
            kept: vec![ZERO; dim * dim],
        }
    }
}

impl Generator {
    pub fn new(model: &SystemModel) -> Self {
        let dim = model.dim();
        let mut drift = model.hamiltonian.matrix().scale(C64::new(0.0, -1.0));
        for ch in &model.channels {
            let m = ch.op.matrix();
            drift = drift.add_scaled(&m.adjoint().matmul(m), C64::new(-0.5, 0.0));
        }
        Self {
            dim,
            drift,
            channels: model.channels.iter().map(|c| c.op.matrix().clone()).collect(),
            monitored: model.monitored_index(),
        }
    }

    /// `out = L[ρ]` for Hermitian row-major `rho`. When `keep` is set, `L_keep ρ` is left
    /// in `ws.kept`.
    pub fn lindblad_into(&self, rho: &[C64], out: &mut [C64], ws: &mut Workspace, keep: Option<usize>) {
        let n = self.dim;
        self.drift.mul_dense_into(rho, n, &mut ws.g);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = ws.g[i * n + j] + ws.g[j * n + i].conj();
            }
        }
        for (k, l) in self.channels.iter().enumerate() {
            l.mul_dense_into(rho, n, &mut ws.m);
            conj_transpose(&ws.m, n, &mut ws.t);
            l.mul_dense_acc(&ws.t, n, out);
            if keep == Some(k) {
                ws.kept.copy_from_slice(&ws.m);
            }
        }
    }
}

pub(crate) fn conj_transpose(src: &[C64], n: usize, dst: &mut [C64]) {
    for i in 0..n {
        for j in 0..n {
            dst[j * n + i] = src[i * n + j].conj();
        }
    }
}

/// Replaces `rho` by `(ρ + ρ†) / 2`. [`Generator::lindblad_into`] is only correct on
/// Hermitian input, so roundoff must not be allowed to accumulate.
pub(crate) fn hermitize(rho: &mut [C64], n: usize) {
    for i in 0..n {
        rho[i * n + i].im = 0.0;
        for j in (i + 1)..n {
            let avg = (rho[i * n + j] + rho[j * n + i].conj()) * 0.5;
            rho[i * n + j] = avg;
            rho[j * n + i] = avg.conj();
        }
    }
}

/// Replaces `rho` by `(ρ + ρ†) / (2 tr ρ)`; returns the trace before normalization.
pub(crate) fn hermitize_normalize(rho: &mut [C64], n: usize) -> f64 {
    let tr: f64 = (0..n).map(|i| rho[i * n + i].re).sum();
    let inv = 1.0 / tr;
    for i in 0..n {
        rho[i * n + i] = C64::new(rho[i * n + i].re * inv, 0.0);
        for j in (i + 1)..n {
            let avg = (rho[i * n + j] + rho[j * n + i].conj()) * (0.5 * inv);
            rho[i * n + j] = avg;
            rho[j * n + i] = avg.conj();
        }
    }
    tr
}

pub(crate) fn trace_of(m: &[C64], n: usize) -> C64 {
    (0..n).map(|i| m[i * n + i]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        let g = TimeGrid::with_stride(130.0, 0.005, 10).unwrap();
        assert_eq!(g.n_steps(), 26000);
        assert_eq!(g.n_records(), 2600);
        assert!((g.record_dt() - 0.05).abs() < 1e-15);
        let r = g.refined(2);
        assert_eq!(r.n_steps(), 52000);
        assert_eq!(r.n_records(), 2600);
        assert_eq!(TimeGrid::new(0.0, 0.01).unwrap().n_steps(), 0);
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        assert!(TimeGrid::new(-1.0, 0.1).is_err());
        assert!(TimeGrid::with_stride(1.0, 0.1, 0).is_err());
        let g = TimeGrid::new(1.0, 0.005).unwrap();
        assert!(g.check_stability(4.0).is_ok());
        assert!(g.check_stability(4.1).is_err());
    }
}
