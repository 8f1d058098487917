//! Dense and sparse storage for Delassus-type matrices, Cholesky
//! factorizations and a power-iteration eigenvalue estimator.

use nalgebra::{DMatrix, DVector, Vector3};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};

/// Problems with more contacts than this are stored in compressed sparse
/// column form; smaller ones stay dense.
pub const DENSE_CONTACT_LIMIT: usize = 64;

/// Symmetric positive-semidefinite matrix in either dense or CSC storage.
#[derive(Debug, Clone, PartialEq)]
pub enum SymMatrix {
    Dense(DMatrix<f64>),
    Sparse(CscMatrix<f64>),
}

impl SymMatrix {
    /// Chooses the storage from the contact count.
    pub fn from_dense(m: DMatrix<f64>, n_contacts: usize) -> Self {
        if n_contacts > DENSE_CONTACT_LIMIT {
            SymMatrix::Sparse(dense_to_csc(&m))
        } else {
            SymMatrix::Dense(m)
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        dim: usize,
        triplets: &[(usize, usize, f64)],
        n_contacts: usize,
    ) -> Result<Self> {
        for &(i, j, _) in triplets {
            if i >= dim || j >= dim {
                return Err(Error::Dimension(format!(
                    "triplet ({i}, {j}) out of bounds for a {dim}x{dim} matrix"
                )));
            }
        }
        if n_contacts > DENSE_CONTACT_LIMIT {
            let mut coo = CooMatrix::new(dim, dim);
            for &(i, j, v) in triplets {
                coo.push(i, j, v);
            }
            Ok(SymMatrix::Sparse(CscMatrix::from(&coo)))
        } else {
            let mut m = DMatrix::zeros(dim, dim);
            for &(i, j, v) in triplets {
                m[(i, j)] += v;
            }
            Ok(SymMatrix::Dense(m))
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SymMatrix::Dense(m) => m.nrows(),
            SymMatrix::Sparse(m) => m.nrows(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, SymMatrix::Sparse(_))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymMatrix::Dense(m) => m.clone(),
            SymMatrix::Sparse(m) => {
                let mut d = DMatrix::zeros(m.nrows(), m.ncols());
                for (i, j, v) in m.triplet_iter() {
                    d[(i, j)] += *v;
                }
                d
            }
        }
    }

    /// Non-zero entries as `(row, col, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        match self {
            SymMatrix::Dense(m) => {
                let mut out = Vec::new();
                for j in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        let v = m[(i, j)];
                        if v != 0.0 {
                            out.push((i, j, v));
                        }
                    }
                }
                out
            }
            SymMatrix::Sparse(m) => m.triplet_iter().map(|(i, j, v)| (i, j, *v)).collect(),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            SymMatrix::Dense(m) => m.diagonal(),
            SymMatrix::Sparse(m) => {
                let mut d = DVector::zeros(m.nrows());
                for (i, j, v) in m.triplet_iter() {
                    if i == j {
                        d[i] += *v;
                    }
                }
                d
            }
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SymMatrix::Dense(m) => m * x,
            SymMatrix::Sparse(m) => {
                let mut y = DVector::zeros(m.nrows());
                for (j, col) in m.col_iter().enumerate() {
                    let xj = x[j];
                    if xj == 0.0 {
                        continue;
                    }
                    for (&i, &v) in col.row_indices().iter().zip(col.values()) {
                        y[i] += v * xj;
                    }
                }
                y
            }
        }
    }

    /// Rows `3i..3i+3` of `self * x`, read from the matching columns (the
    /// matrix is symmetric).
    pub fn block_row_mul(&self, contact: usize, x: &DVector<f64>) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        match self {
            SymMatrix::Dense(m) => {
                for k in 0..3 {
                    out[k] = m.column(3 * contact + k).dot(x);
                }
            }
            SymMatrix::Sparse(m) => {
                for k in 0..3 {
                    let col = m.col(3 * contact + k);
                    out[k] = col
                        .row_indices()
                        .iter()
                        .zip(col.values())
                        .map(|(&i, &v)| v * x[i])
                        .sum();
                }
            }
        }
        out
    }

    /// Adds `a * x[col-block]` into `y`, i.e. `y += a * M[:, 3i..3i+3] * dx`.
    pub fn axpy_block_col(&self, contact: usize, dx: &Vector3<f64>, y: &mut DVector<f64>) {
        match self {
            SymMatrix::Dense(m) => {
                for k in 0..3 {
                    if dx[k] != 0.0 {
                        y.axpy(dx[k], &m.column(3 * contact + k), 1.0);
                    }
                }
            }
            SymMatrix::Sparse(m) => {
                for k in 0..3 {
                    if dx[k] == 0.0 {
                        continue;
                    }
                    let col = m.col(3 * contact + k);
                    for (&i, &v) in col.row_indices().iter().zip(col.values()) {
                        y[i] += v * dx[k];
                    }
                }
            }
        }
    }

    /// Largest absolute entry; used for relative symmetry checks.
    pub fn max_abs(&self) -> f64 {
        match self {
            SymMatrix::Dense(m) => m.amax(),
            SymMatrix::Sparse(m) => m.values().iter().fold(0.0, |a, v| a.max(v.abs())),
        }
    }
}

fn dense_to_csc(m: &DMatrix<f64>) -> CscMatrix<f64> {
    let mut coo = CooMatrix::new(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                coo.push(i, j, v);
            }
        }
    }
    CscMatrix::from(&coo)
}

/// Dense LLᵀ factorization that reports the failing pivot.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    l: DMatrix<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "cannot factor a non-square {}x{} matrix",
                n,
                a.ncols()
            )));
        }
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Factorization { pivot: j });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = rhs.clone();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut DVector<f64>) {
        self.l.solve_lower_triangular_mut(x);
        self.l.tr_solve_lower_triangular_mut(x);
    }

    /// Solves `A X = B` column by column, overwriting `b`.
    pub fn solve_matrix_in_place(&self, b: &mut DMatrix<f64>) {
        self.l.solve_lower_triangular_mut(b);
        self.l.tr_solve_lower_triangular_mut(b);
    }
}

/// Cholesky factorization of `M + diag(shift)` for a symmetric `M`.
pub enum ShiftedCholesky {
    Dense(DenseCholesky),
    Sparse(CscCholesky<f64>),
}

impl std::fmt::Debug for ShiftedCholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShiftedCholesky::Dense(c) => f.debug_tuple("Dense").field(&c.l().nrows()).finish(),
            ShiftedCholesky::Sparse(c) => f.debug_tuple("Sparse").field(&c.l().nnz()).finish(),
        }
    }
}

impl ShiftedCholesky {
    pub fn factor(m: &SymMatrix, shift: &DVector<f64>) -> Result<Self> {
        if shift.len() != m.dim() {
            return Err(Error::Dimension(format!(
                "diagonal shift has length {}, matrix is {}x{}",
                shift.len(),
                m.dim(),
                m.dim()
            )));
        }
        match m {
            SymMatrix::Dense(a) => {
                let mut a = a.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += shift[i];
                }
                Ok(ShiftedCholesky::Dense(DenseCholesky::factor(&a)?))
            }
            SymMatrix::Sparse(a) => {
                let n = a.nrows();
                let mut coo = CooMatrix::new(n, n);
                for (i, j, v) in a.triplet_iter() {
                    coo.push(i, j, *v);
                }
                for i in 0..n {
                    coo.push(i, i, shift[i]);
                }
                let shifted = CscMatrix::from(&coo);
                let chol = CscCholesky::factor(&shifted).map_err(|_| {
                    // The sparse factorizer does not report the pivot; locate it densely.
                    let dense = SymMatrix::Sparse(shifted.clone()).to_dense();
                    match DenseCholesky::factor(&dense) {
                        Err(e) => e,
                        Ok(_) => Error::Factorization { pivot: n },
                    }
                })?;
                Ok(ShiftedCholesky::Sparse(chol))
            }
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            ShiftedCholesky::Dense(c) => c.solve(rhs),
            ShiftedCholesky::Sparse(c) => {
                let x = c.solve(rhs);
                DVector::from_column_slice(x.as_slice())
            }
        }
    }
}

/// Result of a power iteration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Deterministic, non-degenerate start vector (fractional parts of a
/// golden-ratio sequence) so traces are reproducible.
fn start_vector(n: usize) -> DVector<f64> {
    const PHI: f64 = 0.618_033_988_749_894_9;
    let v = DVector::from_fn(n, |i, _| {
        let t = ((i as f64 + 1.0) * PHI).fract();
        0.5 + t
    });
    let norm = v.norm();
    v / norm
}

/// Largest eigenvalue of a symmetric PSD operator by power iteration on the
/// Rayleigh quotient. Stops when the quotient changes by less than
/// `rel_tol` relative, or after `max_iter` products.
pub fn power_iteration<F>(n: usize, apply: F, max_iter: usize, rel_tol: f64) -> PowerEstimate
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if n == 0 {
        return PowerEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let mut v = start_vector(n);
    let mut value = 0.0;
    for it in 1..=max_iter {
        let w = apply(&v);
        let rq = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 || !norm.is_finite() {
            return PowerEstimate {
                value: rq.max(0.0),
                iterations: it,
                converged: norm == 0.0,
            };
        }
        let done = it > 1 && (rq - value).abs() <= rel_tol * rq.abs();
        value = rq;
        v = w / norm;
        if done {
            return PowerEstimate {
                value,
                iterations: it,
                converged: true,
            };
        }
    }
    PowerEstimate {
        value,
        iterations: max_iter,
        converged: false,
    }
}
