//! Dense symmetric positive (semi-)definite matrices with a cached
//! factorization, plus small span utilities shared across modules.
//!
//! Weighted norms follow the convention `|x|^2_S = <x, S^{-1} x>`, so every
//! consumer goes through [`Spd::solve`] / [`Spd::quad`]; no explicit inverse
//! is ever formed.

use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{EkiError, Result};

enum Factor {
    Chol(nalgebra::Cholesky<f64, Dyn>),
    /// Spectral factorization with small eigenvalues dropped from the
    /// inverse. Used for covariances that are PSD only up to round-off
    /// (e.g. smooth kernel Gram matrices, truncated mode expansions); the
    /// solve then acts as a pseudo-inverse on the numerically resolved span.
    Eig {
        q: DMatrix<f64>,
        inv_lambda: DVector<f64>,
    },
}

pub struct Spd {
    mat: DMatrix<f64>,
    factor: Factor,
    eig_min: f64,
    eig_max: f64,
}

/// Relative eigenvalue / singular-value cutoff used throughout the crate for
/// rank decisions.
pub const RANK_CUTOFF: f64 = 1e-12;

impl Spd {
    /// Strictly positive definite matrix, factored by Cholesky.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(EkiError::DimensionMismatch {
                what: "Spd::new (square matrix required)",
                expected: mat.nrows(),
                actual: mat.ncols(),
            });
        }
        let chol = nalgebra::Cholesky::new(mat.clone()).ok_or_else(|| {
            EkiError::Factorization(format!(
                "Cholesky failed on {}x{} matrix (not positive definite)",
                mat.nrows(),
                mat.ncols()
            ))
        })?;
        let (eig_min, eig_max) = symmetric_eig_range(&mat);
        Ok(Spd {
            mat,
            factor: Factor::Chol(chol),
            eig_min,
            eig_max,
        })
    }

    /// Positive semi-definite matrix factored spectrally. Eigenvalues below
    /// `RANK_CUTOFF` times the largest (or negative round-off) are excluded
    /// from the inverse, so `solve` is the pseudo-inverse on the retained
    /// span. Intended for covariances whose trailing spectrum is numerical
    /// noise; all flows and solvers in this crate stay inside the retained
    /// span by construction.
    pub fn new_clamped(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(EkiError::DimensionMismatch {
                what: "Spd::new_clamped (square matrix required)",
                expected: mat.nrows(),
                actual: mat.ncols(),
            });
        }
        let sym = nalgebra::SymmetricEigen::new(mat.clone());
        let eig_max = sym.eigenvalues.max();
        if !(eig_max > 0.0) {
            return Err(EkiError::Factorization(
                "matrix has no positive eigenvalue".into(),
            ));
        }
        let cutoff = RANK_CUTOFF * eig_max;
        let inv_lambda = sym
            .eigenvalues
            .map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
        let eig_min = sym.eigenvalues.min();
        Ok(Spd {
            mat,
            factor: Factor::Eig {
                q: sym.eigenvectors,
                inv_lambda,
            },
            eig_min,
            eig_max,
        })
    }

    /// Diagonal covariance `s * I`.
    pub fn scaled_identity(dim: usize, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(EkiError::InvalidInput(format!(
                "scaled_identity requires s > 0, got {s}"
            )));
        }
        Spd::new(DMatrix::identity(dim, dim) * s)
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Smallest eigenvalue of the *stored* matrix (may be negative round-off
    /// for clamped factorizations).
    pub fn eig_min(&self) -> f64 {
        self.eig_min
    }

    pub fn eig_max(&self) -> f64 {
        self.eig_max
    }

    /// Smallest eigenvalue on the numerically retained range: for clamped
    /// factorizations the smallest eigenvalue above the rank cutoff, for
    /// strictly positive definite matrices the same as [`Spd::eig_min`].
    pub fn eig_min_pos(&self) -> f64 {
        match &self.factor {
            Factor::Chol(_) => self.eig_min,
            Factor::Eig { inv_lambda, .. } => 1.0 / inv_lambda.max(),
        }
    }

    /// `S^{-1} v` (pseudo-inverse on the retained span for clamped
    /// factorizations).
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Chol(c) => c.solve(v),
            Factor::Eig { q, inv_lambda } => {
                let w = q.transpose() * v;
                let scaled = w.component_mul(inv_lambda);
                q * scaled
            }
        }
    }

    /// Column-wise solve.
    pub fn solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            Factor::Chol(c) => c.solve(m),
            Factor::Eig { q, inv_lambda } => {
                let mut w = q.transpose() * m;
                for j in 0..w.ncols() {
                    let mut col = w.column_mut(j);
                    for i in 0..col.nrows() {
                        col[i] *= inv_lambda[i];
                    }
                }
                q * w
            }
        }
    }

    /// Weighted square norm `<v, S^{-1} v>`, guaranteed non-negative.
    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        match &self.factor {
            Factor::Chol(c) => {
                let y = c
                    .l_dirty()
                    .solve_lower_triangular(v)
                    .expect("cholesky factor is nonsingular");
                y.norm_squared()
            }
            Factor::Eig { q, inv_lambda } => {
                let w = q.transpose() * v;
                w.iter()
                    .zip(inv_lambda.iter())
                    .map(|(wi, il)| wi * wi * il)
                    .sum()
            }
        }
    }

    /// `trace(M^T S^{-1} M)`, i.e. the squared Frobenius norm of
    /// `S^{-1/2} M`.
    pub fn quad_mat(&self, m: &DMatrix<f64>) -> f64 {
        (0..m.ncols())
            .map(|j| self.quad(&DVector::from(m.column(j).into_owned())))
            .sum()
    }
}

fn symmetric_eig_range(mat: &DMatrix<f64>) -> (f64, f64) {
    let eig = nalgebra::SymmetricEigen::new(mat.clone());
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// Orthonormal basis for the column span of `cols`, dropping directions whose
/// singular value falls below `RANK_CUTOFF` times the largest.
pub fn span_basis(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let d = cols.nrows();
    let svd = nalgebra::SVD::new(cols.clone(), true, false);
    let u = svd.u.expect("SVD with U requested");
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return DMatrix::zeros(d, 0);
    }
    let cutoff = RANK_CUTOFF * smax;
    let kept: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cutoff)
        .collect();
    let mut basis = DMatrix::zeros(d, kept.len());
    for (bi, &i) in kept.iter().enumerate() {
        basis.set_column(bi, &u.column(i));
    }
    basis
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(EkiError::InvalidInput(format!(
            "ls_slope needs two equal-length samples of >= 2 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    if sxx == 0.0 {
        return Err(EkiError::UndefinedRate("zero variance in abscissa".into()));
    }
    Ok(sxy / sxx)
}
