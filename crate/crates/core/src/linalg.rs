//! Dense and sparse complex linear algebra shared by every other module.
//!
//! Dense matrices are `ndarray::Array2<Complex64>`; Hermitian
//! eigendecomposition goes through LAPACK. The sparse type is a minimal CSR
//! holding only what operator construction and Krylov propagation need.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Identity matrix of dimension `n`.
pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

/// Conjugate transpose.
pub fn adjoint(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Matrix trace.
pub fn trace(a: &Array2<C64>) -> C64 {
    a.diag().iter().copied().sum()
}

/// Frobenius inner product `Tr[a† b]`.
pub fn frobenius_inner(a: &Array2<C64>, b: &Array2<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// `Tr[a b]` without materializing the product.
pub fn trace_product(a: &Array2<C64>, b: &Array2<C64>) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[[i, j]] * b[[j, i]];
        }
    }
    acc
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Largest deviation from Hermiticity, `max |a - a†|`.
pub fn hermiticity_deviation(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    dev
}

/// Spectral norm via the largest eigenvalue of `a† a`.
pub fn spectral_norm(a: &Array2<C64>) -> f64 {
    let gram = adjoint(a).dot(a);
    match gram.eigh(UPLO::Lower) {
        Ok((vals, _)) => vals.iter().fold(0.0_f64, |m, &v| m.max(v)).max(0.0).sqrt(),
        Err(_) => a.iter().map(|z| z.norm()).fold(0.0, f64::max),
    }
}

/// Eigendecomposition of a Hermitian matrix: `h = V diag(values) V†`.
///
/// Columns of `vectors` are the eigenvectors, ascending eigenvalue order.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub values: Array1<f64>,
    pub vectors: Array2<C64>,
}

impl EigenBasis {
    pub fn of_hermitian(h: &Array2<C64>) -> Result<Self> {
        let (values, vectors) = h
            .eigh(UPLO::Lower)
            .map_err(|e| Error::Linalg(e.to_string()))?;
        // The LAPACK call sees the row-major buffer as column-major, so it
        // diagonalizes A^T = conj(A); conjugating restores A's eigenvectors.
        let vectors = vectors.mapv(|z| z.conj());
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Materialize the unitary `exp(-i h t) = V diag(e^{-i λ t}) V†`.
    pub fn unitary(&self, t: f64) -> Array2<C64> {
        let mut scaled = self.vectors.clone();
        for (mut col, &lam) in scaled.columns_mut().into_iter().zip(self.values.iter()) {
            let phase = C64::from_polar(1.0, -lam * t);
            col.mapv_inplace(|z| z * phase);
        }
        scaled.dot(&adjoint(&self.vectors))
    }

    /// `V† a V`: express an operator in this eigenbasis.
    pub fn to_basis(&self, a: &Array2<C64>) -> Array2<C64> {
        adjoint(&self.vectors).dot(&a.dot(&self.vectors))
    }

    /// `V a V†`: map an eigenbasis-expressed operator back.
    pub fn from_basis(&self, a: &Array2<C64>) -> Array2<C64> {
        self.vectors.dot(&a.dot(&adjoint(&self.vectors)))
    }

    /// Heisenberg conjugation in the eigenbasis: entries of `U† a U` where
    /// `U = exp(-i h t)`, given `a` already expressed in the eigenbasis.
    pub fn heisenberg_in_basis(&self, a_basis: &Array2<C64>, t: f64) -> Array2<C64> {
        let n = self.dim();
        let mut out = a_basis.clone();
        for m in 0..n {
            for k in 0..n {
                let phase = C64::from_polar(1.0, (self.values[m] - self.values[k]) * t);
                out[[m, k]] *= phase;
            }
        }
        out
    }

    /// Apply `exp(-i h t)` to a state vector.
    pub fn apply(&self, v: &Array1<C64>, t: f64) -> Array1<C64> {
        let coeffs = adjoint(&self.vectors).dot(v);
        let phased = Array1::from_iter(
            coeffs
                .iter()
                .zip(self.values.iter())
                .map(|(c, &lam)| c * C64::from_polar(1.0, -lam * t)),
        );
        self.vectors.dot(&phased)
    }
}

/// Compressed sparse row matrix over `Complex64`.
///
/// Rows are sorted by column index; construction sums duplicate entries and
/// drops exact zeros.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are accumulated and
    /// entries that sum to exactly zero are dropped.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut merged: Vec<(usize, usize, C64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            debug_assert!(r < dim && c < dim);
            match merged.last_mut() {
                Some((lr, lc, lv)) if *lr == r && *lc == c => *lv += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|(_, _, v)| v.norm() > 0.0);

        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(merged.len());
        let mut vals = Vec::with_capacity(merged.len());
        for (r, c, v) in merged {
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &Array1<C64>) -> Array1<C64> {
        let mut out = Array1::zeros(self.dim);
        for r in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[idx] * v[self.cols[idx]];
            }
            out[r] = acc;
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        for v in &mut out.vals {
            *v *= s;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for m in [self, other] {
            for r in 0..m.dim {
                for idx in m.row_ptr[r]..m.row_ptr[r + 1] {
                    triplets.push((r, m.cols[idx], m.vals[idx]));
                }
            }
        }
        Self::from_triplets(self.dim, triplets)
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut out = Array2::zeros((self.dim, self.dim));
        for r in 0..self.dim {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[[r, self.cols[idx]]] += self.vals[idx];
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..self.dim {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.cols[idx] == r {
                    acc += self.vals[idx];
                }
            }
        }
        acc
    }

    /// Entry lookup by binary search within the row.
    pub fn get(&self, row: usize, col: usize) -> C64 {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        match self.cols[lo..hi].binary_search(&col) {
            Ok(pos) => self.vals[lo + pos],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// `Tr[self * other]` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..self.dim {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[idx] * other.get(self.cols[idx], r);
            }
        }
        acc
    }

    /// `max |A - A†|` over the stored pattern and its transpose.
    pub fn hermiticity_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for r in 0..self.dim {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[idx];
                dev = dev.max((self.vals[idx] - self.get(c, r).conj()).norm());
            }
        }
        dev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigh_of_pauli_x_like() {
        let h = array![
            [C64::new(0.0, 0.0), C64::new(0.5, 0.0)],
            [C64::new(0.5, 0.0), C64::new(0.0, 0.0)]
        ];
        let basis = EigenBasis::of_hermitian(&h).unwrap();
        assert!((basis.values[0] + 0.5).abs() < 1e-12);
        assert!((basis.values[1] - 0.5).abs() < 1e-12);
        let u = basis.unitary(std::f64::consts::PI);
        // exp(-i pi h) with eigenvalues ±1/2 has eigenphases ∓i.
        let expected = array![
            [C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
            [C64::new(0.0, -1.0), C64::new(0.0, 0.0)]
        ];
        assert!(max_abs_diff(&u, &expected) < 1e-12);
    }

    // Pins the eigenvector convention on a genuinely complex Hermitian
    // matrix: columns must satisfy A v = lambda v, not conj(A) v = lambda v.
    #[test]
    fn eigh_columns_are_right_eigenvectors() {
        let a = array![
            [C64::new(0.3, 0.0), C64::new(0.0, -0.5)],
            [C64::new(0.0, 0.5), C64::new(-0.1, 0.0)]
        ];
        let basis = EigenBasis::of_hermitian(&a).unwrap();
        for j in 0..2 {
            let v = basis.vectors.column(j).to_owned();
            let av = a.dot(&v);
            let resid: f64 = av
                .iter()
                .zip(v.iter())
                .map(|(x, y)| (x - y * basis.values[j]).norm())
                .sum();
            assert!(resid < 1e-12, "column {j} residual {resid:.2e}");
        }
    }

    #[test]
    fn csr_matvec_matches_dense() {
        let triplets = vec![
            (0, 1, C64::new(2.0, 0.0)),
            (1, 0, C64::new(0.0, 1.0)),
            (2, 2, C64::new(-1.0, 0.0)),
            (0, 1, C64::new(1.0, 0.0)), // duplicate accumulates
        ];
        let m = CsrMatrix::from_triplets(3, triplets);
        assert_eq!(m.nnz(), 3);
        let v = array![
            C64::new(1.0, 0.0),
            C64::new(2.0, 0.0),
            C64::new(3.0, 0.0)
        ];
        let dense = m.to_dense();
        let want = dense.dot(&v);
        let got = m.matvec(&v);
        for (a, b) in want.iter().zip(got.iter()) {
            assert!((a - b).norm() < 1e-14);
        }
    }
}
