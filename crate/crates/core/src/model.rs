//! Detector models: source mode C cascaded into an absorber ensemble B₁..B_N whose
//! total excitation number is monitored through a measurement mode A.
//!
//! All models are written in the frame rotating at the (common) source and mean absorber
//! frequency, so only detunings and dispersive shifts appear.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{
    annihilation, embed, level_projector, quadratures, HilbertError, HilbertSpace, Operator,
    QuantumState, SubsystemSpec, I,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("misconfiguration: {0}")]
    Misconfigured(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("invalid T1/T2 pair: T2 = {t2} exceeds 2·T1 = {}", 2.0 * .t1)]
    InvalidCoherence { t1: f64, t2: f64 },
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

/// Unit of time used by a configuration; rates are in the inverse unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    /// Time measured in units of 1/κ_B (rates relative to κ_B).
    InverseKappaB,
    /// Time in μs, rates in rad/μs.
    Microsecond,
}

impl TimeUnit {
    pub fn suffix(self) -> &'static str {
        match self {
            Self::InverseKappaB => "1/kappa_B",
            Self::Microsecond => "us",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub dim_a: usize,
    pub dim_b: usize,
    pub dim_c: usize,
    /// Maximum total excitation number kept in the source and absorber subsystems.
    /// `None` keeps the full tensor product.
    pub excitation_cap: Option<usize>,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            dim_a: 15,
            dim_b: 2,
            dim_c: 2,
            excitation_cap: Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersiveParams {
    pub chi: f64,
    /// Steady-state resonator drive amplitude (dimensionless).
    pub alpha: f64,
    pub delta_plus: f64,
    /// `None` means no relaxation.
    pub t1: Option<f64>,
    /// `None` means no dephasing beyond relaxation.
    pub t2: Option<f64>,
}

impl DispersiveParams {
    pub fn relaxation_rate(&self) -> f64 {
        self.t1.map_or(0.0, |t1| 1.0 / t1)
    }

    /// Pure dephasing rate γ_φ = 1/T2 − 1/(2T1).
    pub fn dephasing_rate(&self) -> f64 {
        let gamma_2 = self.t2.map_or(0.5 * self.relaxation_rate(), |t2| 1.0 / t2);
        gamma_2 - 0.5 * self.relaxation_rate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Variant {
    Ideal { g_z: f64 },
    Dispersive(DispersiveParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub n_absorbers: usize,
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub kappa_c: f64,
    /// Detuning of each absorber from the mean absorber frequency.
    pub deltas: Vec<f64>,
    pub eta_h: f64,
    pub variant: Variant,
    pub truncation: Truncation,
    pub with_photon: bool,
    pub time_unit: TimeUnit,
}

/// Coupling and detunings of the ideal ensemble sets used for the fidelity-vs-N study,
/// in units of κ_B.
pub const IDEAL_PRESETS: [(f64, &[f64]); 4] = [
    (1.0, &[0.0]),
    (0.6, &[0.55, -0.55]),
    (0.5, &[0.7, -0.7, 0.0]),
    (0.4, &[0.7, -0.7, 0.23, -0.23]),
];

impl DetectorConfig {
    /// Ideal ensemble in κ_B units with κ_A = 0.2, κ_C = 0.1.
    pub fn ideal(g_z: f64, deltas: Vec<f64>) -> Self {
        Self {
            n_absorbers: deltas.len(),
            kappa_a: 0.2,
            kappa_b: 1.0,
            kappa_c: 0.1,
            deltas,
            eta_h: 1.0,
            variant: Variant::Ideal { g_z },
            truncation: Truncation::default(),
            with_photon: true,
            time_unit: TimeUnit::InverseKappaB,
        }
    }

    /// Fidelity-vs-N preset for `n` absorbers (1 ≤ n ≤ 4).
    pub fn ideal_preset(n: usize) -> Option<Self> {
        let (g_z, deltas) = IDEAL_PRESETS.get(n.checked_sub(1)?)?;
        let mut cfg = Self::ideal(*g_z, deltas.to_vec());
        cfg.truncation.dim_a = default_dim_a(n, false);
        Some(cfg)
    }

    /// Four-transmon dispersive implementation, rates in rad/μs.
    pub fn dispersive_preset() -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        Self {
            n_absorbers: 4,
            kappa_a: two_pi * 2.0,
            kappa_b: two_pi * 10.0,
            kappa_c: two_pi * 1.0,
            deltas: [6.6, -7.4, 2.3, -2.3].iter().map(|d| two_pi * d).collect(),
            eta_h: 1.0,
            variant: Variant::Dispersive(DispersiveParams {
                chi: two_pi * 0.4,
                alpha: 5.0,
                delta_plus: 0.0,
                t1: Some(30.0),
                t2: Some(30.0),
            }),
            truncation: Truncation {
                dim_a: default_dim_a(4, true),
                ..Truncation::default()
            },
            with_photon: true,
            time_unit: TimeUnit::Microsecond,
        }
    }

    pub fn with_photon(mut self, with_photon: bool) -> Self {
        self.with_photon = with_photon;
        self
    }

    /// Longitudinal coupling g_z; derived as 2χα for the dispersive variant.
    pub fn g_z(&self) -> f64 {
        match &self.variant {
            Variant::Ideal { g_z } => *g_z,
            Variant::Dispersive(p) => 2.0 * p.chi * p.alpha,
        }
    }

    pub fn is_dispersive(&self) -> bool {
        matches!(self.variant, Variant::Dispersive(_))
    }

    /// Largest dissipative rate in the model.
    pub fn max_rate(&self) -> f64 {
        let mut rates = vec![self.kappa_a, self.kappa_b, self.kappa_c];
        if let Variant::Dispersive(p) = &self.variant {
            rates.push(p.relaxation_rate());
            rates.push(2.0 * p.dephasing_rate());
        }
        rates.into_iter().fold(0.0, f64::max)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut issues = Vec::new();
        if self.n_absorbers < 1 {
            issues.push("n_absorbers must be at least 1".to_string());
        }
        if self.deltas.len() != self.n_absorbers {
            issues.push(format!(
                "deltas has {} entries but n_absorbers = {}",
                self.deltas.len(),
                self.n_absorbers
            ));
        }
        let finite_nonneg = |name: &str, v: f64, issues: &mut Vec<String>| {
            if !v.is_finite() || v < 0.0 {
                issues.push(format!("{name} must be a finite non-negative rate (got {v})"));
            }
        };
        if !(self.kappa_a.is_finite() && self.kappa_a > 0.0) {
            issues.push(format!("kappa_A must be positive (got {})", self.kappa_a));
        }
        finite_nonneg("kappa_B", self.kappa_b, &mut issues);
        finite_nonneg("kappa_C", self.kappa_c, &mut issues);
        if !(self.eta_h > 0.0 && self.eta_h <= 1.0) {
            issues.push(format!("eta_h must lie in (0, 1] (got {})", self.eta_h));
        }
        if self.deltas.iter().any(|d| !d.is_finite()) {
            issues.push("deltas must be finite".to_string());
        }
        match &self.variant {
            Variant::Ideal { g_z } => {
                if !g_z.is_finite() {
                    issues.push(format!("g_z must be finite (got {g_z})"));
                }
            }
            Variant::Dispersive(p) => {
                finite_nonneg("chi", p.chi, &mut issues);
                if !p.alpha.is_finite() {
                    issues.push(format!("alpha must be finite (got {})", p.alpha));
                }
                if !p.delta_plus.is_finite() {
                    issues.push("delta_plus must be finite".to_string());
                }
                for (name, t) in [("T1", p.t1), ("T2", p.t2)] {
                    if let Some(t) = t {
                        if !(t.is_finite() && t > 0.0) {
                            issues.push(format!("{name} must be positive (got {t})"));
                        }
                    }
                }
                if let (Some(t1), Some(t2)) = (p.t1, p.t2) {
                    if t2 > 2.0 * t1 {
                        issues.push(format!("T2 = {t2} exceeds 2·T1 = {}", 2.0 * t1));
                    }
                }
            }
        }
        let t = &self.truncation;
        for (name, d) in [("dim_A", t.dim_a), ("dim_B", t.dim_b), ("dim_C", t.dim_c)] {
            if d < 2 {
                issues.push(format!("{name} must be at least 2 (got {d})"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(issues))
        }
    }
}

/// Default measurement-mode truncation. Chosen so that the ensemble-averaged population
/// of the top level stays below 10⁻⁶ for the preset parameter sets.
pub fn default_dim_a(n_absorbers: usize, dispersive: bool) -> usize {
    match (n_absorbers, dispersive) {
        (_, true) => 28,
        (1, false) => 55,
        (2 | 3, false) => 40,
        _ => 32,
    }
}

#[derive(Debug, Clone)]
pub struct CollapseChannel {
    pub name: String,
    pub op: Operator,
    pub monitored: bool,
}

/// Hamiltonian, collapse channels and observables ready for integration.
///
/// The monitored channel stores `L = -i √κ_A â`, so that `⟨L + L†⟩ = √κ_A ⟨Ŷ_A⟩` and the
/// homodyne back-action is `√η_h H[L]`.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub space: Arc<HilbertSpace>,
    pub hamiltonian: Operator,
    /// The `g_z N̂_B X̂_A` term alone.
    pub interaction: Operator,
    pub channels: Vec<CollapseChannel>,
    pub y_meas: Operator,
    pub observables: BTreeMap<String, Operator>,
    pub eta_h: f64,
    pub time_unit: TimeUnit,
    pub max_rate: f64,
}

impl SystemModel {
    pub fn monitored(&self) -> &CollapseChannel {
        self.channels
            .iter()
            .find(|c| c.monitored)
            .expect("every model has a monitored channel")
    }

    pub fn monitored_index(&self) -> usize {
        self.channels.iter().position(|c| c.monitored).unwrap()
    }

    pub fn observable(&self, name: &str) -> Option<&Operator> {
        self.observables.get(name)
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }
}

struct Ladders {
    space: Arc<HilbertSpace>,
    a: Operator,
    b: Vec<Operator>,
    c: Operator,
    bright: Operator,
    n_b: Operator,
}

fn absorber_label(i: usize) -> String {
    format!("B{}", i + 1)
}

fn ladders(cfg: &DetectorConfig) -> Result<Ladders, ModelError> {
    let t = &cfg.truncation;
    let mut subsystems = vec![SubsystemSpec::new("C", t.dim_c)?];
    for i in 0..cfg.n_absorbers {
        subsystems.push(SubsystemSpec::new(absorber_label(i), t.dim_b)?);
    }
    subsystems.push(SubsystemSpec::new("A", t.dim_a)?);
    let mut space = HilbertSpace::new(subsystems)?;
    if let Some(cap) = t.excitation_cap {
        let labels: Vec<String> = std::iter::once("C".to_string())
            .chain((0..cfg.n_absorbers).map(absorber_label))
            .collect();
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        space = space.restrict_excitations(&refs, cap)?;
    }
    let space = Arc::new(space);

    let a = embed(&annihilation(t.dim_a)?, "A", &space)?;
    let c = embed(&annihilation(t.dim_c)?, "C", &space)?;
    let b: Vec<Operator> = (0..cfg.n_absorbers)
        .map(|i| embed(&annihilation(t.dim_b)?, &absorber_label(i), &space))
        .collect::<Result<_, _>>()?;
    let norm = 1.0 / (cfg.n_absorbers as f64).sqrt();
    let bright = b.iter().fold(Operator::zero(&space), |acc, bi| &acc + bi) * norm;
    let n_b = b
        .iter()
        .fold(Operator::zero(&space), |acc, bi| &acc + &(&bi.adjoint() * bi));
    Ok(Ladders {
        space,
        a,
        b,
        c,
        bright,
        n_b,
    })
}

/// Shared structure of all three models; `extra` adds variant-specific Hamiltonian terms
/// and channels.
fn assemble(
    cfg: &DetectorConfig,
    extra: impl FnOnce(&Ladders) -> Result<(Operator, Vec<CollapseChannel>), ModelError>,
) -> Result<SystemModel, ModelError> {
    cfg.validate()?;
    let l = ladders(cfg)?;
    let (x_a, y_a) = quadratures(&l.a);

    let interaction = &(&l.n_b * &x_a) * cfg.g_z();
    let detunings = l
        .b
        .iter()
        .zip(&cfg.deltas)
        .fold(Operator::zero(&l.space), |acc, (bi, &d)| &acc + &(&(&bi.adjoint() * bi) * d));
    // Source C drives the bright mode: H = (i/2)√(κ_B κ_C)(ĉ†b̂₊ − b̂₊†ĉ).
    let hop = &l.c.adjoint() * &l.bright;
    let cascade = &(&hop - &hop.adjoint()) * (I * (0.5 * (cfg.kappa_b * cfg.kappa_c).sqrt()));
    let (extra_h, extra_channels) = extra(&l)?;
    let hamiltonian = &(&(&interaction + &detunings) + &cascade) + &extra_h;

    let mut channels = vec![CollapseChannel {
        name: "measurement".into(),
        op: &l.a * (-I * cfg.kappa_a.sqrt()),
        monitored: true,
    }];
    let waveguide = &(&l.bright * cfg.kappa_b.sqrt()) + &(&l.c * cfg.kappa_c.sqrt());
    if waveguide.max_abs() > 0.0 {
        channels.push(CollapseChannel {
            name: "waveguide".into(),
            op: waveguide.clone(),
            monitored: false,
        });
    }
    channels.extend(extra_channels);

    let dim_a = cfg.truncation.dim_a;
    let mut observables = BTreeMap::new();
    let n_a = &l.a.adjoint() * &l.a;
    observables.insert("Y_A".to_string(), y_a.clone());
    observables.insert("X_A".to_string(), x_a);
    observables.insert("n_A".to_string(), n_a);
    observables.insert("N_B".to_string(), l.n_b.clone());
    observables.insert("n_C".to_string(), &l.c.adjoint() * &l.c);
    observables.insert("bright".to_string(), &l.bright.adjoint() * &l.bright);
    observables.insert("emission".to_string(), &waveguide.adjoint() * &waveguide);
    observables.insert(
        "top_A".to_string(),
        embed(&level_projector(dim_a, dim_a - 1)?, "A", &l.space)?,
    );
    for (i, bi) in l.b.iter().enumerate() {
        observables.insert(format!("n_{}", absorber_label(i)), &bi.adjoint() * bi);
    }

    Ok(SystemModel {
        space: l.space,
        hamiltonian,
        interaction,
        channels,
        y_meas: y_a,
        observables,
        eta_h: cfg.eta_h,
        time_unit: cfg.time_unit,
        max_rate: cfg.max_rate(),
    })
}

/// Single absorber B longitudinally coupled to A, fed by source C.
pub fn build_single_absorber(cfg: &DetectorConfig) -> Result<SystemModel, ModelError> {
    if cfg.n_absorbers != 1 {
        return Err(ModelError::Misconfigured(format!(
            "single-absorber model needs n_absorbers = 1 (got {})",
            cfg.n_absorbers
        )));
    }
    build_ensemble(cfg)
}

/// Inhomogeneously detuned ensemble coupled to the waveguide through its bright mode.
pub fn build_ensemble(cfg: &DetectorConfig) -> Result<SystemModel, ModelError> {
    if cfg.is_dispersive() {
        return Err(ModelError::Misconfigured(
            "ideal builder called with a dispersive configuration".into(),
        ));
    }
    assemble(cfg, |l| Ok((Operator::zero(&l.space), Vec::new())))
}

/// Transmon ensemble dispersively coupled to a driven resonator, in the displaced frame,
/// with per-transmon relaxation and pure dephasing.
pub fn build_dispersive(cfg: &DetectorConfig) -> Result<SystemModel, ModelError> {
    let Variant::Dispersive(p) = &cfg.variant else {
        return Err(ModelError::Misconfigured(
            "dispersive builder called with an ideal configuration".into(),
        ));
    };
    if let (Some(t1), Some(t2)) = (p.t1, p.t2) {
        if t2 > 2.0 * t1 {
            return Err(ModelError::InvalidCoherence { t1, t2 });
        }
    }
    let gamma_1 = p.relaxation_rate();
    let gamma_phi = p.dephasing_rate();
    assemble(cfg, |l| {
        let n_a = &l.a.adjoint() * &l.a;
        let dispersive_shift = &(&l.n_b * &n_a) * (2.0 * p.chi);
        let lamb = &(&l.bright.adjoint() * &l.bright) * p.delta_plus;
        let mut channels = Vec::new();
        for (i, bi) in l.b.iter().enumerate() {
            if gamma_1 > 0.0 {
                channels.push(CollapseChannel {
                    name: format!("relax_{}", absorber_label(i)),
                    op: bi * gamma_1.sqrt(),
                    monitored: false,
                });
            }
            if gamma_phi > 0.0 {
                // D[√(2γ_φ) n̂] damps the 0–1 coherence at rate γ_φ.
                channels.push(CollapseChannel {
                    name: format!("dephase_{}", absorber_label(i)),
                    op: &(&bi.adjoint() * bi) * (2.0 * gamma_phi).sqrt(),
                    monitored: false,
                });
            }
        }
        Ok((&dispersive_shift + &lamb, channels))
    })
}

/// Dispatches on the configuration variant.
pub fn build(cfg: &DetectorConfig) -> Result<SystemModel, ModelError> {
    if cfg.is_dispersive() {
        build_dispersive(cfg)
    } else {
        build_ensemble(cfg)
    }
}

/// `|1⟩_C ⊗ |vac⟩` with a signal photon, the global vacuum otherwise.
pub fn initial_state(cfg: &DetectorConfig, space: &HilbertSpace) -> Result<QuantumState, ModelError> {
    let idx = if cfg.with_photon {
        space.basis_index(&[("C", 1)])?
    } else {
        space.basis_index(&[])?
    };
    Ok(QuantumState::basis(space, idx))
}

/// Global vacuum-annihilating check used in tests and diagnostics.
pub fn vacuum_state(space: &HilbertSpace) -> QuantumState {
    QuantumState::basis(space, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{expectation, ONE, ZERO};

    fn cfg1() -> DetectorConfig {
        DetectorConfig::ideal(1.0, vec![0.0])
    }

    #[test]
    fn builders_produce_hermitian_hamiltonians() {
        for n in 1..=4 {
            let m = build(&DetectorConfig::ideal_preset(n).unwrap()).unwrap();
            assert!(m.hamiltonian.hermiticity_error() < 1e-10);
        }
        let m = build(&DetectorConfig::dispersive_preset()).unwrap();
        assert!(m.hamiltonian.hermiticity_error() < 1e-10);
    }

    #[test]
    fn single_absorber_requires_one_absorber() {
        let cfg = DetectorConfig::ideal_preset(2).unwrap();
        assert!(matches!(build_single_absorber(&cfg), Err(ModelError::Misconfigured(_))));
        assert!(build_single_absorber(&cfg1()).is_ok());
    }

    #[test]
    fn detuning_length_checked() {
        let mut cfg = DetectorConfig::ideal(0.5, vec![0.1, 0.2]);
        cfg.n_absorbers = 3;
        assert!(matches!(build_ensemble(&cfg), Err(ModelError::Invalid(_))));
    }

    #[test]
    fn channel_layout() {
        let m = build(&cfg1()).unwrap();
        assert_eq!(m.channels.len(), 2);
        assert_eq!(m.channels.iter().filter(|c| c.monitored).count(), 1);
        let m = build(&DetectorConfig::dispersive_preset()).unwrap();
        // measurement + waveguide + (relaxation + dephasing) per transmon
        assert_eq!(m.channels.len(), 2 + 8);
        assert_eq!(m.channels.iter().filter(|c| c.monitored).count(), 1);
    }

    #[test]
    fn interaction_commutes_with_measured_number() {
        for n in 1..=4 {
            let m = build(&DetectorConfig::ideal_preset(n).unwrap()).unwrap();
            let nb = m.observable("N_B").unwrap();
            assert_eq!(m.interaction.commutator(nb).max_abs(), 0.0);
        }
    }

    #[test]
    fn zero_coupling_removes_a_b_term() {
        let mut cfg = cfg1();
        cfg.variant = Variant::Ideal { g_z: 0.0 };
        let m = build(&cfg).unwrap();
        assert_eq!(m.interaction.max_abs(), 0.0);
        let n_a = m.observable("n_A").unwrap();
        assert_eq!(m.hamiltonian.commutator(n_a).max_abs(), 0.0);
    }

    #[test]
    fn dispersive_coupling_is_derived() {
        let cfg = DetectorConfig::dispersive_preset();
        let Variant::Dispersive(p) = &cfg.variant else { unreachable!() };
        assert!((cfg.g_z() / p.chi - 10.0).abs() < 1e-12);
        assert!((cfg.g_z() / cfg.kappa_b - 0.4).abs() < 1e-12);
    }

    #[test]
    fn dispersive_reduces_to_uncoupled_ensemble() {
        let mut disp = DetectorConfig::dispersive_preset();
        disp.variant = Variant::Dispersive(DispersiveParams {
            chi: 0.0,
            alpha: 5.0,
            delta_plus: 0.0,
            t1: None,
            t2: None,
        });
        let mut ideal = disp.clone();
        ideal.variant = Variant::Ideal { g_z: 0.0 };
        let a = build_dispersive(&disp).unwrap();
        let b = build_ensemble(&ideal).unwrap();
        assert_eq!((&a.hamiltonian - &b.hamiltonian).max_abs(), 0.0);
        assert_eq!(a.channels.len(), b.channels.len());
        for (x, y) in a.channels.iter().zip(&b.channels) {
            assert_eq!((&x.op - &y.op).max_abs(), 0.0);
        }
    }

    #[test]
    fn inconsistent_coherence_times_rejected() {
        let mut cfg = DetectorConfig::dispersive_preset();
        if let Variant::Dispersive(p) = &mut cfg.variant {
            p.t1 = Some(10.0);
            p.t2 = Some(30.0);
        }
        assert!(build_dispersive(&cfg).is_err());
    }

    #[test]
    fn initial_states() {
        let cfg = DetectorConfig::ideal_preset(3).unwrap();
        let m = build(&cfg).unwrap();
        let psi = initial_state(&cfg, &m.space).unwrap();
        let ev = |name: &str, s: &QuantumState| expectation(s, m.observable(name).unwrap()).unwrap();
        assert_eq!(ev("n_C", &psi), ONE);
        assert_eq!(ev("N_B", &psi), ZERO);
        assert_eq!(ev("n_A", &psi), ZERO);
        let vac = initial_state(&cfg.clone().with_photon(false), &m.space).unwrap();
        for name in ["n_C", "N_B", "n_A"] {
            assert_eq!(ev(name, &vac), ZERO);
        }
    }

    #[test]
    fn negative_rates_rejected() {
        let mut cfg = cfg1();
        cfg.kappa_c = -0.1;
        cfg.eta_h = 1.5;
        match cfg.validate() {
            Err(ModelError::Invalid(issues)) => assert_eq!(issues.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn restricted_and_full_spaces_share_structure() {
        let mut cfg = DetectorConfig::ideal_preset(2).unwrap();
        cfg.truncation.dim_a = 4;
        let r = build(&cfg).unwrap();
        cfg.truncation.excitation_cap = None;
        let f = build(&cfg).unwrap();
        assert_eq!(r.dim(), 4 * 4);
        assert_eq!(f.dim(), 8 * 4);
        for (row, col, v) in r.hamiltonian.matrix().iter() {
            let fr = r.space.full_index(row);
            let fc = r.space.full_index(col);
            assert!((f.hamiltonian.matrix().get(fr, fc) - v).norm() < 1e-14);
        }
    }
}
