use ndarray::Array2;
use num_complex::Complex64 as C64;

use super::{ExpectationTraces, Generator, IntegrationError, TimeGrid, Workspace};
use crate::hilbert::{expectation_mixed, HilbertError, QuantumState, ZERO};
use crate::model::SystemModel;

/// Population of the top measurement level above which a run is flagged as truncated.
pub const TRUNCATION_LIMIT: f64 = 1e-6;

/// `L[ρ] = -i[H, ρ] + Σ_j D[L_j]ρ`.
pub fn lindblad_rhs(model: &SystemModel, rho: &QuantumState) -> Result<Array2<C64>, IntegrationError> {
    let n = model.dim();
    if rho.dim() != n {
        return Err(HilbertError::DimensionMismatch {
            expected: n,
            found: rho.dim(),
        }
        .into());
    }
    let rho = rho.to_density();
    let gen = Generator::new(model);
    let mut ws = Workspace::new(n);
    let mut out = vec![ZERO; n * n];
    gen.lindblad_into(rho.as_slice().unwrap(), &mut out, &mut ws, None);
    Ok(Array2::from_shape_vec((n, n), out).unwrap())
}

#[derive(Debug, Clone)]
pub struct MasterSolution {
    /// Every registered observable of the model, sampled at the record times.
    pub traces: ExpectationTraces,
    pub final_state: QuantumState,
    /// Largest `|tr ρ − 1|` seen at any record time.
    pub max_trace_error: f64,
    /// Peak population of the top measurement-mode level.
    pub top_level_max: f64,
    pub warnings: Vec<String>,
}

/// Unconditional master equation with classical fourth-order Runge–Kutta steps.
pub fn solve_master(
    model: &SystemModel,
    state0: &QuantumState,
    grid: &TimeGrid,
) -> Result<MasterSolution, IntegrationError> {
    let n = model.dim();
    if state0.dim() != n {
        return Err(HilbertError::DimensionMismatch {
            expected: n,
            found: state0.dim(),
        }
        .into());
    }
    let gen = Generator::new(model);
    let mut ws = Workspace::new(n);
    let mut rho = state0.to_density().into_raw_vec_and_offset().0;

    let n_steps = grid.n_steps();
    let mut times = grid.record_times();
    if times.is_empty() {
        times.push(0.0);
    }
    let observables: Vec<(&String, &crate::hilbert::Operator)> = model.observables.iter().collect();
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(times.len()); observables.len()];
    let top = model.observable("top_A").map(|o| o.matrix().clone());

    let mut max_trace_error: f64 = 0.0;
    let mut top_level_max: f64 = 0.0;
    let mut record = |rho: &[C64], series: &mut Vec<Vec<f64>>| {
        for (s, (_, op)) in series.iter_mut().zip(&observables) {
            s.push(expectation_mixed(rho, n, op.matrix()).re);
        }
        let tr: f64 = (0..n).map(|i| rho[i * n + i].re).sum();
        max_trace_error = max_trace_error.max((tr - 1.0).abs());
        if let Some(top) = &top {
            top_level_max = top_level_max.max(expectation_mixed(rho, n, top).re);
        }
    };

    let dt = grid.dt;
    let mut k1 = vec![ZERO; n * n];
    let mut k2 = vec![ZERO; n * n];
    let mut k3 = vec![ZERO; n * n];
    let mut k4 = vec![ZERO; n * n];
    let mut tmp = vec![ZERO; n * n];
    for step in 0..n_steps {
        if step % grid.record_stride == 0 {
            record(&rho, &mut series);
        }
        gen.lindblad_into(&rho, &mut k1, &mut ws, None);
        axpy_into(&rho, &k1, 0.5 * dt, &mut tmp);
        gen.lindblad_into(&tmp, &mut k2, &mut ws, None);
        axpy_into(&rho, &k2, 0.5 * dt, &mut tmp);
        gen.lindblad_into(&tmp, &mut k3, &mut ws, None);
        axpy_into(&rho, &k3, dt, &mut tmp);
        gen.lindblad_into(&tmp, &mut k4, &mut ws, None);
        let w = dt / 6.0;
        for i in 0..n * n {
            rho[i] += w * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
        super::hermitize(&mut rho, n);
        if !rho[0].re.is_finite() {
            return Err(IntegrationError::StateBreach {
                step,
                detail: "non-finite density matrix".into(),
            });
        }
    }
    if n_steps == 0 {
        record(&rho, &mut series);
    }

    let mut traces = ExpectationTraces::new(grid.record_dt(), times);
    for ((name, _), s) in observables.iter().zip(series) {
        traces.series.insert((*name).clone(), s);
    }
    let mut warnings = Vec::new();
    if top_level_max >= TRUNCATION_LIMIT {
        warnings.push(format!(
            "measurement-mode truncation: top-level population reached {top_level_max:.3e} (limit {TRUNCATION_LIMIT:.0e})"
        ));
    }
    Ok(MasterSolution {
        traces,
        final_state: QuantumState::Mixed(Array2::from_shape_vec((n, n), rho).unwrap()),
        max_trace_error,
        top_level_max,
        warnings,
    })
}

fn axpy_into(x: &[C64], y: &[C64], a: f64, out: &mut [C64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{embed, annihilation, HilbertSpace, Operator, SubsystemSpec};
    use crate::model::{build, initial_state, CollapseChannel, DetectorConfig, TimeUnit, Variant};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn decaying_mode(kappa: f64) -> SystemModel {
        let space = Arc::new(HilbertSpace::new(vec![SubsystemSpec::new("A", 4).unwrap()]).unwrap());
        let a = embed(&annihilation(4).unwrap(), "A", &space).unwrap();
        let mut observables = BTreeMap::new();
        observables.insert("n_A".to_string(), &a.adjoint() * &a);
        SystemModel {
            space: Arc::clone(&space),
            hamiltonian: Operator::zero(&space),
            interaction: Operator::zero(&space),
            channels: vec![CollapseChannel {
                name: "measurement".into(),
                op: &a * kappa.sqrt(),
                monitored: true,
            }],
            y_meas: Operator::zero(&space),
            observables,
            eta_h: 1.0,
            time_unit: TimeUnit::InverseKappaB,
            max_rate: kappa,
        }
    }

    #[test]
    fn decay_generator_rate() {
        let kappa = 0.7;
        let m = decaying_mode(kappa);
        let rho = QuantumState::basis(&m.space, 1).into_mixed();
        let d = lindblad_rhs(&m, &rho).unwrap();
        let dn: C64 = (0..4).map(|i| d[[i, i]] * i as f64).sum();
        assert!((dn.re + kappa).abs() < 1e-14);
        assert!(d.diag().iter().sum::<C64>().norm() < 1e-14);
    }

    #[test]
    fn vacuum_derivative_is_pure_commutator() {
        let cfg = DetectorConfig::ideal_preset(2).unwrap();
        let m = build(&cfg).unwrap();
        let vac = initial_state(&cfg.clone().with_photon(false), &m.space).unwrap();
        let d = lindblad_rhs(&m, &vac).unwrap();
        let rho = vac.to_density();
        let h = m.hamiltonian.to_dense();
        let comm = (h.dot(&rho) - rho.dot(&h)).mapv(|v| v * C64::new(0.0, -1.0));
        assert!((&d - &comm).iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn derivative_is_traceless_and_hermitian() {
        let cfg = DetectorConfig::ideal_preset(2).unwrap();
        let m = build(&cfg).unwrap();
        let mut rho = QuantumState::Pure(ndarray::Array1::from_shape_fn(m.dim(), |i| {
            C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())
        }));
        rho.normalize();
        let d = lindblad_rhs(&m, &rho).unwrap();
        assert!(d.diag().iter().sum::<C64>().norm() < 1e-10);
        let herm = &d - &d.t().mapv(|v| v.conj());
        assert!(herm.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn vacuum_input_stays_dark() {
        let cfg = DetectorConfig::ideal_preset(1).unwrap().with_photon(false);
        let m = build(&cfg).unwrap();
        let psi = initial_state(&cfg, &m.space).unwrap();
        let sol = solve_master(&m, &psi, &TimeGrid::with_stride(5.0, 0.01, 10).unwrap()).unwrap();
        for (_, s) in &sol.traces.series {
            assert!(s.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn source_population_decays_exponentially() {
        let mut cfg = DetectorConfig::ideal_preset(1).unwrap();
        cfg.variant = Variant::Ideal { g_z: 0.0 };
        let m = build(&cfg).unwrap();
        let psi = initial_state(&cfg, &m.space).unwrap();
        let sol = solve_master(&m, &psi, &TimeGrid::with_stride(30.0, 0.005, 20).unwrap()).unwrap();
        let nc = sol.traces.get("n_C").unwrap();
        for (t, v) in sol.traces.t.iter().zip(nc) {
            assert!((v - (-cfg.kappa_c * t).exp()).abs() < 1e-6);
        }
        assert!(sol.max_trace_error < 1e-8);
    }

    #[test]
    fn zero_length_grid_returns_initial_values() {
        let cfg = DetectorConfig::ideal_preset(1).unwrap();
        let m = build(&cfg).unwrap();
        let psi = initial_state(&cfg, &m.space).unwrap();
        let sol = solve_master(&m, &psi, &TimeGrid::new(0.0, 0.01).unwrap()).unwrap();
        assert_eq!(sol.traces.len(), 1);
        assert_eq!(sol.traces.get("n_C").unwrap()[0], 1.0);
    }
}
