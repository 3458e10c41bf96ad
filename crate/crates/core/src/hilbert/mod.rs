//! Truncated tensor-product Hilbert spaces and the complex operators acting on them.
//!
//! A [`HilbertSpace`] is an ordered list of truncated subsystems. It may additionally be
//! restricted to the basis states whose total excitation number over a subset of
//! subsystems does not exceed a cap; operators embedded into a restricted space are the
//! projections `P O P` onto the kept basis.

mod sparse;

use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use thiserror::Error;

pub use sparse::SparseMatrix;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("invalid truncation dimension {0} (must be at least 2)")]
    InvalidDimension(usize),
    #[error("duplicate subsystem label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown subsystem label `{0}`")]
    UnknownLabel(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operators live on different Hilbert spaces")]
    SpaceMismatch,
    #[error("invalid state: {0}")]
    InvalidState(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubsystemSpec {
    pub label: String,
    pub dim: usize,
}

impl SubsystemSpec {
    pub fn new(label: impl Into<String>, dim: usize) -> Result<Self, HilbertError> {
        if dim < 2 {
            return Err(HilbertError::InvalidDimension(dim));
        }
        Ok(Self {
            label: label.into(),
            dim,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Restriction {
    labels: Vec<String>,
    cap: usize,
    kept: Vec<usize>,
    /// Working index for every product-basis index, `usize::MAX` when discarded.
    position: Vec<usize>,
}

/// Ordered product of truncated subsystems, optionally restricted to an
/// excitation-number-capped subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertSpace {
    subsystems: Vec<SubsystemSpec>,
    strides: Vec<usize>,
    full_dim: usize,
    restriction: Option<Restriction>,
}

impl HilbertSpace {
    pub fn new(subsystems: Vec<SubsystemSpec>) -> Result<Self, HilbertError> {
        let mut seen = HashSet::new();
        for s in &subsystems {
            if s.dim < 2 {
                return Err(HilbertError::InvalidDimension(s.dim));
            }
            if !seen.insert(s.label.clone()) {
                return Err(HilbertError::DuplicateLabel(s.label.clone()));
            }
        }
        let mut strides = vec![1usize; subsystems.len()];
        for k in (0..subsystems.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * subsystems[k + 1].dim;
        }
        let full_dim = subsystems.iter().map(|s| s.dim).product();
        Ok(Self {
            subsystems,
            strides,
            full_dim,
            restriction: None,
        })
    }

    /// Keeps only basis states whose summed occupation over `labels` is at most `cap`.
    pub fn restrict_excitations(&self, labels: &[&str], cap: usize) -> Result<Self, HilbertError> {
        let positions: Vec<usize> = labels
            .iter()
            .map(|l| self.index_of(l))
            .collect::<Result<_, _>>()?;
        let mut kept = Vec::new();
        let mut position = vec![usize::MAX; self.full_dim];
        for idx in 0..self.full_dim {
            let excitations: usize = positions.iter().map(|&k| self.digit(idx, k)).sum();
            if excitations <= cap {
                position[idx] = kept.len();
                kept.push(idx);
            }
        }
        Ok(Self {
            restriction: Some(Restriction {
                labels: labels.iter().map(|s| s.to_string()).collect(),
                cap,
                kept,
                position,
            }),
            ..self.clone()
        })
    }

    pub fn subsystems(&self) -> &[SubsystemSpec] {
        &self.subsystems
    }

    /// Working dimension (size of state vectors).
    pub fn dim(&self) -> usize {
        self.restriction
            .as_ref()
            .map_or(self.full_dim, |r| r.kept.len())
    }

    /// Product of all subsystem dimensions.
    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    pub fn is_restricted(&self) -> bool {
        self.restriction.is_some()
    }

    pub fn excitation_cap(&self) -> Option<(&[String], usize)> {
        self.restriction
            .as_ref()
            .map(|r| (r.labels.as_slice(), r.cap))
    }

    pub fn index_of(&self, label: &str) -> Result<usize, HilbertError> {
        self.subsystems
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| HilbertError::UnknownLabel(label.to_string()))
    }

    pub fn subsystem_dim(&self, label: &str) -> Result<usize, HilbertError> {
        Ok(self.subsystems[self.index_of(label)?].dim)
    }

    fn digit(&self, full_index: usize, k: usize) -> usize {
        (full_index / self.strides[k]) % self.subsystems[k].dim
    }

    /// Product-basis index of working index `i`.
    pub fn full_index(&self, i: usize) -> usize {
        self.restriction.as_ref().map_or(i, |r| r.kept[i])
    }

    /// Working index of a product-basis index, if kept.
    pub fn working_index(&self, full: usize) -> Option<usize> {
        match &self.restriction {
            None => (full < self.full_dim).then_some(full),
            Some(r) => r.position.get(full).copied().filter(|&p| p != usize::MAX),
        }
    }

    /// Occupation numbers of every subsystem for working index `i`.
    pub fn occupations(&self, i: usize) -> Vec<usize> {
        let full = self.full_index(i);
        (0..self.subsystems.len()).map(|k| self.digit(full, k)).collect()
    }

    /// Working index of the product state with the given per-subsystem levels.
    pub fn basis_index(&self, levels: &[(&str, usize)]) -> Result<usize, HilbertError> {
        let mut full = 0;
        for (label, level) in levels {
            let k = self.index_of(label)?;
            if *level >= self.subsystems[k].dim {
                return Err(HilbertError::DimensionMismatch {
                    expected: self.subsystems[k].dim,
                    found: *level + 1,
                });
            }
            full += level * self.strides[k];
        }
        self.working_index(full)
            .ok_or_else(|| HilbertError::InvalidState("basis state outside the kept subspace".into()))
    }
}

impl fmt::Display for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .subsystems
            .iter()
            .map(|s| format!("{}[{}]", s.label, s.dim))
            .collect();
        write!(f, "{}", parts.join(" ⊗ "))?;
        if let Some(r) = &self.restriction {
            write!(f, " | Σ n({}) ≤ {} → dim {}", r.labels.join(","), r.cap, r.kept.len())?;
        }
        Ok(())
    }
}

/// Truncated bosonic lowering operator: `M[n-1, n] = √n`.
pub fn annihilation(dim: usize) -> Result<SparseMatrix, HilbertError> {
    if dim < 2 {
        return Err(HilbertError::InvalidDimension(dim));
    }
    Ok(SparseMatrix::from_triplets(
        dim,
        dim,
        (1..dim).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))),
    ))
}

/// Projector onto level `level` of a `dim`-level subsystem.
pub fn level_projector(dim: usize, level: usize) -> Result<SparseMatrix, HilbertError> {
    if dim < 2 {
        return Err(HilbertError::InvalidDimension(dim));
    }
    if level >= dim {
        return Err(HilbertError::DimensionMismatch {
            expected: dim,
            found: level + 1,
        });
    }
    Ok(SparseMatrix::from_triplets(dim, dim, [(level, level, ONE)]))
}

/// Truncated coherent state with amplitude `beta`, renormalized after truncation.
pub fn coherent_state(dim: usize, beta: C64) -> Vec<C64> {
    let mut v = Vec::with_capacity(dim);
    let mut coeff = ONE;
    for n in 0..dim {
        if n > 0 {
            coeff *= beta / (n as f64).sqrt();
        }
        v.push(coeff);
    }
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|c| *c /= norm);
    v
}

/// Complex linear operator on a [`HilbertSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    space: Arc<HilbertSpace>,
    matrix: SparseMatrix,
}

/// Lifts a single-subsystem operator to `I ⊗ … ⊗ op ⊗ … ⊗ I` on `space`.
pub fn embed(op: &SparseMatrix, target: &str, space: &Arc<HilbertSpace>) -> Result<Operator, HilbertError> {
    let k = space.index_of(target)?;
    let dim = space.subsystems[k].dim;
    if !op.is_square() || op.rows() != dim {
        return Err(HilbertError::DimensionMismatch {
            expected: dim,
            found: op.rows(),
        });
    }
    let stride = space.strides[k];
    // Column access to the local operator.
    let local_cols: Vec<Vec<(usize, C64)>> = {
        let mut cols = vec![Vec::new(); dim];
        for (r, c, v) in op.iter() {
            cols[c].push((r, v));
        }
        cols
    };
    let mut triplets = Vec::new();
    for col in 0..space.dim() {
        let full = space.full_index(col);
        let level = space.digit(full, k);
        for &(r, v) in &local_cols[level] {
            let target_full = full + r * stride - level * stride;
            if let Some(row) = space.working_index(target_full) {
                triplets.push((row, col, v));
            }
        }
    }
    Ok(Operator {
        space: Arc::clone(space),
        matrix: SparseMatrix::from_triplets(space.dim(), space.dim(), triplets),
    })
}

/// `X = a + a†`, `Y = -i (a - a†)`.
pub fn quadratures(a: &Operator) -> (Operator, Operator) {
    let ad = a.adjoint();
    let x = a + &ad;
    let y = (a - &ad) * (-I);
    (x, y)
}

impl Operator {
    pub fn new(space: Arc<HilbertSpace>, matrix: SparseMatrix) -> Result<Self, HilbertError> {
        if !matrix.is_square() || matrix.rows() != space.dim() {
            return Err(HilbertError::DimensionMismatch {
                expected: space.dim(),
                found: matrix.rows(),
            });
        }
        Ok(Self { space, matrix })
    }

    pub fn zero(space: &Arc<HilbertSpace>) -> Self {
        Self {
            space: Arc::clone(space),
            matrix: SparseMatrix::zeros(space.dim(), space.dim()),
        }
    }

    pub fn identity(space: &Arc<HilbertSpace>) -> Self {
        Self {
            space: Arc::clone(space),
            matrix: SparseMatrix::identity(space.dim()),
        }
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: Arc::clone(&self.space),
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    /// Largest entry modulus of `A - A†`.
    pub fn hermiticity_error(&self) -> f64 {
        self.matrix
            .add_scaled(&self.matrix.adjoint(), -ONE)
            .max_abs()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.max_abs()
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn to_dense(&self) -> Array2<C64> {
        self.matrix.to_dense()
    }

    fn check_space(&self, other: &Self) {
        assert!(
            Arc::ptr_eq(&self.space, &other.space) || self.space == other.space,
            "{}",
            HilbertError::SpaceMismatch
        );
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.check_space(rhs);
        Operator {
            space: Arc::clone(&self.space),
            matrix: self.matrix.add_scaled(&rhs.matrix, ONE),
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.check_space(rhs);
        Operator {
            space: Arc::clone(&self.space),
            matrix: self.matrix.add_scaled(&rhs.matrix, -ONE),
        }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.check_space(rhs);
        Operator {
            space: Arc::clone(&self.space),
            matrix: self.matrix.matmul(&rhs.matrix),
        }
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, s: C64) -> Operator {
        Operator {
            space: Arc::clone(&self.space),
            matrix: self.matrix.scale(s),
        }
    }
}

impl Mul<C64> for Operator {
    type Output = Operator;
    fn mul(self, s: C64) -> Operator {
        &self * s
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, s: f64) -> Operator {
        self * C64::new(s, 0.0)
    }
}

impl Mul<f64> for Operator {
    type Output = Operator;
    fn mul(self, s: f64) -> Operator {
        &self * C64::new(s, 0.0)
    }
}

/// Pure state vector or density matrix on the working basis.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(Array1<C64>),
    Mixed(Array2<C64>),
}

pub const STATE_TOL: f64 = 1e-9;

impl QuantumState {
    pub fn dim(&self) -> usize {
        match self {
            Self::Pure(v) => v.len(),
            Self::Mixed(m) => m.nrows(),
        }
    }

    pub fn basis(space: &HilbertSpace, index: usize) -> Self {
        let mut v = Array1::zeros(space.dim());
        v[index] = ONE;
        Self::Pure(v)
    }

    pub fn to_density(&self) -> Array2<C64> {
        match self {
            Self::Pure(v) => Array2::from_shape_fn((v.len(), v.len()), |(i, j)| v[i] * v[j].conj()),
            Self::Mixed(m) => m.clone(),
        }
    }

    pub fn into_mixed(self) -> Self {
        Self::Mixed(self.to_density())
    }

    pub fn norm_or_trace(&self) -> f64 {
        match self {
            Self::Pure(v) => v.iter().map(|c| c.norm_sqr()).sum(),
            Self::Mixed(m) => m.diag().iter().map(|c| c.re).sum(),
        }
    }

    pub fn normalize(&mut self) {
        match self {
            Self::Pure(v) => {
                let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                v.mapv_inplace(|c| c / n);
            }
            Self::Mixed(m) => {
                let tr: f64 = m.diag().iter().map(|c| c.re).sum();
                m.mapv_inplace(|c| c / tr);
            }
        }
    }

    /// Checks normalization and, for density matrices, Hermiticity and that the
    /// diagonal is non-negative (a cheap necessary condition for positivity).
    pub fn validate(&self, tol: f64) -> Result<(), HilbertError> {
        let n = self.norm_or_trace();
        if (n - 1.0).abs() > tol {
            return Err(HilbertError::InvalidState(format!("norm/trace {n} differs from 1")));
        }
        if let Self::Mixed(m) = self {
            let d = m.nrows();
            for i in 0..d {
                if m[[i, i]].re < -1e-8 {
                    return Err(HilbertError::InvalidState(format!(
                        "negative population {} at index {i}",
                        m[[i, i]].re
                    )));
                }
                for j in i..d {
                    if (m[[i, j]] - m[[j, i]].conj()).norm() > tol {
                        return Err(HilbertError::InvalidState("density matrix not Hermitian".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `⟨ψ|O|ψ⟩` for pure states, `tr(O ρ)` for mixed states.
pub fn expectation(state: &QuantumState, op: &Operator) -> Result<C64, HilbertError> {
    if state.dim() != op.dim() {
        return Err(HilbertError::DimensionMismatch {
            expected: op.dim(),
            found: state.dim(),
        });
    }
    Ok(match state {
        QuantumState::Pure(v) => expectation_pure(v.as_slice().unwrap(), op.matrix()),
        QuantumState::Mixed(m) => expectation_mixed(m.as_slice().unwrap(), op.dim(), op.matrix()),
    })
}

#[inline]
pub(crate) fn expectation_pure(psi: &[C64], op: &SparseMatrix) -> C64 {
    let mut acc = ZERO;
    for r in 0..op.rows() {
        let mut row = ZERO;
        for (c, v) in op.row(r) {
            row += v * psi[c];
        }
        acc += psi[r].conj() * row;
    }
    acc
}

/// `tr(O ρ) = Σ_{r,c} O[r,c] ρ[c,r]` for row-major `rho`.
#[inline]
pub(crate) fn expectation_mixed(rho: &[C64], dim: usize, op: &SparseMatrix) -> C64 {
    let mut acc = ZERO;
    for r in 0..op.rows() {
        for (c, v) in op.row(r) {
            acc += v * rho[c * dim + r];
        }
    }
    acc
}
