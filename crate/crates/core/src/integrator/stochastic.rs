use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    hermitize_normalize, ExpectationTraces, Generator, IntegrationError, SolverChoice, SolverOptions,
    TimeGrid, TrajectoryRecord,
};
use crate::hilbert::{expectation_mixed, expectation_pure, HilbertError, QuantumState, SparseMatrix, ZERO};
use crate::model::SystemModel;

/// Populations below this (after renormalization) abort a density-matrix trajectory.
const NEGATIVE_POPULATION_TOL: f64 = 1e-6;

/// Wiener increments for one step: `noise_oversampling` standard normals per channel,
/// drawn sub-step-major so that coarse and fine grids can share a Brownian path.
struct WienerSource {
    rng: ChaCha8Rng,
    channels: usize,
    oversampling: usize,
    scale: f64,
}

impl WienerSource {
    fn new(seed: u64, channels: usize, dt: f64, oversampling: usize) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            channels,
            oversampling,
            scale: (dt / oversampling as f64).sqrt(),
        }
    }

    fn draw(&mut self, out: &mut [f64]) {
        out[..self.channels].iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..self.oversampling {
            for v in out[..self.channels].iter_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *v += z;
            }
        }
        out[..self.channels].iter_mut().for_each(|v| *v *= self.scale);
    }
}

/// Bins the per-step current into record samples and collects conditional traces.
struct Recorder {
    stride: usize,
    current: Vec<f64>,
    acc: f64,
    count: usize,
    traces: Option<Vec<(&'static str, SparseMatrix, Vec<f64>)>>,
    top_max: f64,
}

/// Observables recorded along a trajectory when traces are requested.
const CONDITIONAL_OBSERVABLES: [&str; 3] = ["Y_A", "N_B", "n_C"];

impl Recorder {
    fn new(model: &SystemModel, grid: &TimeGrid, record_traces: bool) -> Self {
        let n = grid.n_records();
        Self {
            stride: grid.record_stride,
            current: Vec::with_capacity(n),
            acc: 0.0,
            count: 0,
            traces: record_traces.then(|| {
                CONDITIONAL_OBSERVABLES
                    .iter()
                    .map(|&name| (name, observable_matrix(model, name), Vec::with_capacity(n)))
                    .collect()
            }),
            top_max: 0.0,
        }
    }

    fn sample(&mut self, eval: impl Fn(&SparseMatrix) -> f64, top: &SparseMatrix) {
        self.top_max = self.top_max.max(eval(top));
        if let Some(traces) = &mut self.traces {
            for (_, op, series) in traces.iter_mut() {
                series.push(eval(op));
            }
        }
    }

    fn at_record_point(&self, step: usize) -> bool {
        step % self.stride == 0
    }

    fn push_current(&mut self, j: f64) {
        self.acc += j;
        self.count += 1;
        if self.count == self.stride {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.count > 0 {
            self.current.push(self.acc / self.count as f64);
            self.acc = 0.0;
            self.count = 0;
        }
    }

    fn finish(mut self, index: usize, seed: u64, grid: &TimeGrid, top_final: f64) -> TrajectoryRecord {
        self.flush();
        self.top_max = self.top_max.max(top_final);
        let traces = self.traces.map(|series| {
            let mut t = ExpectationTraces::new(grid.record_dt(), grid.record_times());
            for (name, _, s) in series {
                t.series.insert(name.to_string(), s);
            }
            t
        });
        TrajectoryRecord {
            index,
            seed,
            dt: grid.record_dt(),
            current: self.current,
            traces,
            top_level_pop: top_final,
            top_level_peak: self.top_max,
        }
    }
}

fn check_shape(model: &SystemModel, state0: &QuantumState) -> Result<(), IntegrationError> {
    if state0.dim() != model.dim() {
        return Err(HilbertError::DimensionMismatch {
            expected: model.dim(),
            found: state0.dim(),
        }
        .into());
    }
    Ok(())
}

fn observable_matrix(model: &SystemModel, name: &str) -> SparseMatrix {
    model
        .observable(name)
        .map(|o| o.matrix().clone())
        .unwrap_or_else(|| SparseMatrix::zeros(model.dim(), model.dim()))
}

/// Density-matrix homodyne trajectory for
/// `dρ = L[ρ] dt + √η_h H[L_mon] ρ dW`, `J = √η_h ⟨L_mon + L_mon†⟩ + dW/dt`,
/// stepped in Kraus form so every step maps states to states.
pub fn solve_sme_trajectory(
    model: &SystemModel,
    state0: &QuantumState,
    grid: &TimeGrid,
    seed: u64,
) -> Result<TrajectoryRecord, IntegrationError> {
    mixed_trajectory(model, state0, grid, seed, 0, SolverOptions::default())
}

/// Pure-state diffusive unravelling, valid for η_h = 1.
pub fn solve_sme_pure(
    model: &SystemModel,
    state0: &QuantumState,
    grid: &TimeGrid,
    seed: u64,
) -> Result<TrajectoryRecord, IntegrationError> {
    pure_trajectory(model, state0, grid, seed, 0, SolverOptions::default())
}

/// Runs one trajectory with the requested solver; `Auto` picks the pure-state solver
/// when η_h = 1. Requesting `Pure` with η_h < 1 falls back to the density matrix.
pub fn solve_with(
    model: &SystemModel,
    state0: &QuantumState,
    grid: &TimeGrid,
    seed: u64,
    index: usize,
    solver: SolverChoice,
    options: SolverOptions,
) -> Result<TrajectoryRecord, IntegrationError> {
    let pure_ok = model.eta_h == 1.0 && matches!(state0, QuantumState::Pure(_));
    match solver {
        SolverChoice::Pure | SolverChoice::Auto if pure_ok => {
            pure_trajectory(model, state0, grid, seed, index, options)
        }
        _ => mixed_trajectory(model, state0, grid, seed, index, options),
    }
}

pub(crate) fn mixed_trajectory(
    model: &SystemModel,
    state0: &QuantumState,
    grid: &TimeGrid,
    seed: u64,
    index: usize,
    options: SolverOptions,
) -> Result<TrajectoryRecord, IntegrationError> {
    check_shape(model, state0)?;
    grid.check_stability(model.max_rate)?;
    let n = model.dim();
    let gen = Generator::new(model);
    let mon = gen.monitored;
    let sqrt_eta = model.eta_h.sqrt();
    let top_op = observable_matrix(model, "top_A");

    let lmon = &gen.channels[mon];
    let lmon_sq = lmon.matmul(lmon);

    let mut rho = state0.to_density().into_raw_vec_and_offset().0;
    let mut m_rho = vec![ZERO; n * n];
    let mut tmp = vec![ZERO; n * n];
    let mut next = vec![ZERO; n * n];
    let mut l_rho = vec![ZERO; n * n];
    let mut noise = WienerSource::new(seed, 1, grid.dt, options.noise_oversampling.max(1));
    let mut dw = [0.0];
    let mut rec = Recorder::new(model, grid, options.record_traces);
    let dt = grid.dt;

    // M = 1 + (-iH - ½ΣL†L) dt + √η L dY + ½η L² (dY² - dt),  dY = J dt
    let apply_m = |x: &[C64], a: C64, b: C64, out: &mut [C64]| {
        out.copy_from_slice(x);
        gen.drift.mul_dense_acc_scaled(x, n, C64::new(dt, 0.0), out);
        lmon.mul_dense_acc_scaled(x, n, a, out);
        lmon_sq.mul_dense_acc_scaled(x, n, b, out);
    };

    for step in 0..grid.n_steps() {
        lmon.mul_dense_into(&rho, n, &mut l_rho);
        let x = 2.0 * super::trace_of(&l_rho, n).re;
        if rec.at_record_point(step) {
            rec.sample(|op| expectation_mixed(&rho, n, op).re, &top_op);
        }
        noise.draw(&mut dw);
        let j = sqrt_eta * x + dw[0] / dt;
        rec.push_current(j);

        let dy = j * dt;
        let a = C64::new(sqrt_eta * dy, 0.0);
        let b = C64::new(0.5 * model.eta_h * (dy * dy - dt), 0.0);
        apply_m(&rho, a, b, &mut m_rho);
        super::conj_transpose(&m_rho, n, &mut tmp);
        apply_m(&tmp, a, b, &mut next);
        // `next` now holds (M ρ M†)†; the unread channels add L ρ L† dt.
        for (k, l) in gen.channels.iter().enumerate() {
            let w = if k == mon { 1.0 - model.eta_h } else { 1.0 };
            if w == 0.0 {
                continue;
            }
            l.mul_dense_into(&rho, n, &mut m_rho);
            super::conj_transpose(&m_rho, n, &mut tmp);
            l.mul_dense_acc_scaled(&tmp, n, C64::new(w * dt, 0.0), &mut next);
        }
        std::mem::swap(&mut rho, &mut next);
        let tr = hermitize_normalize(&mut rho, n);
        if !(tr.is_finite() && tr > 0.0) {
            return Err(IntegrationError::StateBreach {
                step,
                detail: format!("trace {tr} before renormalization"),
            });
        }
        if rec.at_record_point(step + 1) {
            if let Some(i) = (0..n).find(|&i| rho[i * n + i].re < -NEGATIVE_POPULATION_TOL) {
                return Err(IntegrationError::StateBreach {
                    step,
                    detail: format!("negative population {:.3e} at index {i}", rho[i * n + i].re),
                });
            }
        }
    }
    let top_final = expectation_mixed(&rho, n, &top_op).re;
    Ok(rec.finish(index, seed, grid, top_final))
}

pub(crate) fn pure_trajectory(
    model: &SystemModel,
    state0: &QuantumState,
    grid: &TimeGrid,
    seed: u64,
    index: usize,
    options: SolverOptions,
) -> Result<TrajectoryRecord, IntegrationError> {
    check_shape(model, state0)?;
    if model.eta_h != 1.0 {
        return Err(IntegrationError::Unsupported(format!(
            "pure-state unravelling needs eta_h = 1 (got {}); use the density-matrix solver",
            model.eta_h
        )));
    }
    let QuantumState::Pure(psi0) = state0 else {
        return Err(IntegrationError::Unsupported(
            "pure-state solver needs a pure initial state".into(),
        ));
    };
    grid.check_stability(model.max_rate)?;
    let n = model.dim();
    let gen = Generator::new(model);
    let n_ch = gen.channels.len();
    let mon = gen.monitored;
    let top_op = observable_matrix(model, "top_A");

    let mut psi: Vec<C64> = psi0.to_vec();
    let mut v = vec![ZERO; n];
    let mut w = vec![vec![ZERO; n]; n_ch];
    let mut x = vec![0.0; n_ch];
    let mut dw = vec![0.0; n_ch];
    let mut noise = WienerSource::new(seed, n_ch, grid.dt, options.noise_oversampling.max(1));
    let mut rec = Recorder::new(model, grid, options.record_traces);
    let dt = grid.dt;

    for step in 0..grid.n_steps() {
        gen.drift.matvec_into(&psi, &mut v);
        for j in 0..n_ch {
            gen.channels[j].matvec_into(&psi, &mut w[j]);
            x[j] = 2.0 * psi.iter().zip(&w[j]).map(|(p, l)| (p.conj() * l).re).sum::<f64>();
        }
        if rec.at_record_point(step) {
            rec.sample(|op| expectation_pure(&psi, op).re, &top_op);
        }
        noise.draw(&mut dw);
        rec.push_current(x[mon] + dw[mon] / dt);

        // ψ' = ψ + [-iH_eff ψ + Σ(½x L − ⅛x²)ψ] dt + Σ(L − ½x)ψ dW
        let mut self_coeff = 1.0;
        let mut coeff = vec![0.0; n_ch];
        for j in 0..n_ch {
            self_coeff -= 0.125 * x[j] * x[j] * dt + 0.5 * x[j] * dw[j];
            coeff[j] = 0.5 * x[j] * dt + dw[j];
        }
        let mut norm = 0.0;
        for i in 0..n {
            let mut val = self_coeff * psi[i] + dt * v[i];
            for j in 0..n_ch {
                val += coeff[j] * w[j][i];
            }
            psi[i] = val;
            norm += val.norm_sqr();
        }
        if !(norm.is_finite() && norm > 0.0) {
            return Err(IntegrationError::StateBreach {
                step,
                detail: format!("norm² {norm} before renormalization"),
            });
        }
        let inv = 1.0 / norm.sqrt();
        psi.iter_mut().for_each(|p| *p *= inv);
    }
    let top_final = expectation_pure(&psi, &top_op).re;
    Ok(rec.finish(index, seed, grid, top_final))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::solve_master;
    use crate::model::{build, initial_state, DetectorConfig, Variant};

    fn grid() -> TimeGrid {
        TimeGrid::with_stride(10.0, 0.005, 10).unwrap()
    }

    #[test]
    fn identical_seed_gives_identical_record() {
        let cfg = DetectorConfig::ideal_preset(1).unwrap();
        let m = build(&cfg).unwrap();
        let psi = initial_state(&cfg, &m.space).unwrap();
        let a = solve_sme_pure(&m, &psi, &grid(), 42).unwrap();
        let b = solve_sme_pure(&m, &psi, &grid(), 42).unwrap();
        assert_eq!(a, b);
        let c = solve_sme_pure(&m, &psi, &grid(), 43).unwrap();
        assert_ne!(a.current, c.current);
        let a = solve_sme_trajectory(&m, &psi, &grid(), 42).unwrap();
        let b = solve_sme_trajectory(&m, &psi, &grid(), 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.current.len(), grid().n_records());
    }

    #[test]
    fn pure_solver_rejects_inefficient_detection() {
        let mut cfg = DetectorConfig::ideal_preset(1).unwrap();
        cfg.eta_h = 0.5;
        let m = build(&cfg).unwrap();
        let psi = initial_state(&cfg, &m.space).unwrap();
        assert!(matches!(
            solve_sme_pure(&m, &psi, &grid(), 1),
            Err(IntegrationError::Unsupported(_))
        ));
        // falls back to the density-matrix solver
        let r = solve_with(&m, &psi, &grid(), 1, 0, SolverChoice::Pure, SolverOptions::default());
        assert!(r.is_ok());
    }

    #[test]
    fn vacuum_current_is_white_noise() {
        let cfg = DetectorConfig::ideal_preset(1).unwrap().with_photon(false);
        let m = build(&cfg).unwrap();
        let psi = initial_state(&cfg, &m.space).unwrap();
        let g = TimeGrid::with_stride(200.0, 0.005, 1).unwrap();
        let r = solve_sme_pure(&m, &psi, &g, 9).unwrap();
        let n = r.current.len() as f64;
        let mean = r.current.iter().sum::<f64>() / n;
        let var = r.current.iter().map(|j| (j - mean).powi(2)).sum::<f64>() / n;
        // Var[ΔW/dt] = 1/dt; mean has standard error 1/√(n dt).
        assert!((var * g.dt - 1.0).abs() < 0.03, "var·dt = {}", var * g.dt);
        assert!(mean.abs() < 3.0 / (n * g.dt).sqrt());
    }

    #[test]
    fn pure_state_norm_is_preserved() {
        let cfg = DetectorConfig::ideal_preset(2).unwrap();
        let m = build(&cfg).unwrap();
        let psi = initial_state(&cfg, &m.space).unwrap();
        let opts = SolverOptions {
            record_traces: true,
            ..SolverOptions::default()
        };
        let r = pure_trajectory(&m, &psi, &grid(), 5, 0, opts).unwrap();
        let nb = r.traces.unwrap();
        assert!(nb.get("N_B").unwrap().iter().all(|v| (-1e-12..=1.0 + 1e-9).contains(v)));
    }

    #[test]
    fn decaying_mode_average_matches_exponential() {
        // C decays straight into the waveguide (κ_B = 0, g_z = 0); the unravelled state
        // stays pure and the ensemble average of n_C must follow e^{-κ_C t}.
        let mut cfg = DetectorConfig::ideal_preset(1).unwrap();
        cfg.variant = Variant::Ideal { g_z: 0.0 };
        cfg.kappa_b = 0.0;
        cfg.kappa_c = 0.5;
        let m = build(&cfg).unwrap();
        let psi = initial_state(&cfg, &m.space).unwrap();
        let g = TimeGrid::with_stride(4.0, 0.005, 100).unwrap();
        let opts = SolverOptions {
            record_traces: true,
            ..SolverOptions::default()
        };
        let n_traj = 400;
        let mut mean = vec![0.0; g.n_records()];
        for k in 0..n_traj {
            let r = pure_trajectory(&m, &psi, &g, k as u64, k, opts).unwrap();
            let nc = r.traces.unwrap().series.remove("n_C").unwrap();
            for (acc, v) in mean.iter_mut().zip(nc) {
                *acc += v / n_traj as f64;
            }
        }
        for (t, v) in g.record_times().iter().zip(&mean) {
            let exact = (-cfg.kappa_c * t).exp();
            // n_C lies in [0, 1], so its standard error is at most 0.5/√n.
            assert!((v - exact).abs() < 4.0 * 0.5 / (n_traj as f64).sqrt(), "t={t}: {v} vs {exact}");
        }
        let me = solve_master(&m, &psi, &g).unwrap();
        for (t, v) in g.record_times().iter().zip(me.traces.get("n_C").unwrap()) {
            assert!((v - (-cfg.kappa_c * t).exp()).abs() < 1e-9);
        }
    }
}
