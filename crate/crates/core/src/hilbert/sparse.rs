//! Compressed-sparse-row complex matrices.
//!
//! Everything the integrators touch per step goes through [`SparseMatrix::matvec_into`]
//! or [`SparseMatrix::mul_dense_into`], so these two are written as plain slice loops.

use ndarray::Array2;
use num_complex::Complex64 as C64;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<C64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![C64::new(1.0, 0.0); n])
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        Self::from_triplets(
            diag.len(),
            diag.len(),
            diag.iter().enumerate().map(|(i, &v)| (i, i, v)),
        )
    }

    /// Builds a matrix from `(row, col, value)` entries. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets<I>(rows: usize, cols: usize, entries: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut entries: Vec<(usize, usize, C64)> = entries.into_iter().collect();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut data: Vec<C64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        let mut m = Self {
            rows,
            cols,
            indptr,
            indices,
            data,
        };
        m.prune(0.0);
        m
    }

    pub fn from_dense(dense: &Array2<C64>) -> Self {
        let (rows, cols) = dense.dim();
        Self::from_triplets(
            rows,
            cols,
            dense
                .indexed_iter()
                .filter(|(_, v)| **v != C64::new(0.0, 0.0))
                .map(|((r, c), v)| (r, c, *v)),
        )
    }

    /// Drops entries with modulus `<= tol`.
    pub fn prune(&mut self, tol: f64) {
        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.data[k].norm() > tol {
                    indices.push(self.indices[k]);
                    data.push(self.data[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.data = data;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Iterates over stored `(row, col, value)` entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.data[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.data[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.row(r)
            .find(|(col, _)| *col == c)
            .map(|(_, v)| v)
            .unwrap_or_default()
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for (r, c, v) in self.iter() {
            out[[r, c]] += v;
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.cols, self.rows, self.iter().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out.prune(0.0);
        out
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Self, s: C64) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Self::from_triplets(
            self.rows,
            self.cols,
            self.iter().chain(other.iter().map(|(r, c, v)| (r, c, v * s))),
        )
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "shape mismatch");
        let mut triplets = Vec::new();
        let mut acc = vec![C64::new(0.0, 0.0); other.cols];
        let mut touched = vec![false; other.cols];
        let mut cols_hit = Vec::new();
        for r in 0..self.rows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        cols_hit.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            for &c in &cols_hit {
                triplets.push((r, c, acc[c]));
                acc[c] = C64::new(0.0, 0.0);
                touched[c] = false;
            }
            cols_hit.clear();
        }
        Self::from_triplets(self.rows, other.cols, triplets)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut triplets = Vec::with_capacity(self.nnz() * other.nnz());
        for (r1, c1, v1) in self.iter() {
            for (r2, c2, v2) in other.iter() {
                triplets.push((r1 * other.rows + r2, c1 * other.cols + c2, v1 * v2));
            }
        }
        Self::from_triplets(rows, cols, triplets)
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `y = A x`.
    #[inline]
    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            *out = acc;
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `out = A X` for a row-major dense `X` with `width` columns.
    #[inline]
    pub fn mul_dense_into(&self, x: &[C64], width: usize, out: &mut [C64]) {
        debug_assert_eq!(x.len(), self.cols * width);
        debug_assert_eq!(out.len(), self.rows * width);
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            dst.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for k in self.indptr[r]..self.indptr[r + 1] {
                let a = self.data[k];
                let src = &x[self.indices[k] * width..(self.indices[k] + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }

    /// `out += A X`.
    #[inline]
    pub fn mul_dense_acc(&self, x: &[C64], width: usize, out: &mut [C64]) {
        self.mul_dense_acc_scaled(x, width, C64::new(1.0, 0.0), out);
    }

    /// `out += s A X`.
    #[inline]
    pub fn mul_dense_acc_scaled(&self, x: &[C64], width: usize, s: C64, out: &mut [C64]) {
        debug_assert_eq!(x.len(), self.cols * width);
        debug_assert_eq!(out.len(), self.rows * width);
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let a = self.data[k] * s;
                let src = &x[self.indices[k] * width..(self.indices[k] + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }
}
