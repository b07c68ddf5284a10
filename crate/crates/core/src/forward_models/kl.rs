//! Karhunen-Loeve expansions used as priors: a squared-exponential kernel on
//! the 1D grid, and an explicit cosine eigenbasis on the 2D unit square.
//!
//! Both samplers draw `u = sum_j sqrt(lambda_j) xi_j e_j` with standard
//! normal `xi_j`, truncated after a fixed number of terms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{EkiError, Result};
use crate::linalg::Spd;

/// Spectral prior from the kernel `C(s, t) = sigma2 exp(-|s-t|^2 / l_sc)`
/// evaluated on a fixed grid, truncated to the leading `truncation`
/// eigenpairs of the Gram matrix.
pub struct KlPrior1D {
    pub sigma2: f64,
    pub length_scale: f64,
    pub truncation: usize,
    /// Leading eigenvalues, nonincreasing.
    pub eigvals: DVector<f64>,
    /// `d x truncation`, orthonormal columns.
    pub eigvecs: DMatrix<f64>,
    /// Full kernel Gram matrix (the prior covariance `C0`).
    pub gram: DMatrix<f64>,
    /// Number of round-off-negative eigenvalues clamped to zero across the
    /// full spectrum, recorded for diagnostics.
    pub clamped: usize,
}

impl KlPrior1D {
    pub fn new(grid: &DVector<f64>, sigma2: f64, length_scale: f64, truncation: usize) -> Result<Self> {
        let d = grid.nrows();
        if truncation == 0 || truncation > d {
            return Err(EkiError::InvalidInput(format!(
                "truncation must be in 1..={d}, got {truncation}"
            )));
        }
        if !(sigma2 > 0.0) || !(length_scale > 0.0) {
            return Err(EkiError::InvalidInput(
                "sigma2 and length_scale must be positive".into(),
            ));
        }
        let gram = DMatrix::from_fn(d, d, |i, j| {
            let r = grid[i] - grid[j];
            sigma2 * (-(r * r) / length_scale).exp()
        });
        let eig = nalgebra::SymmetricEigen::new(gram.clone());
        // sort descending; smooth kernels have eigenvalues decaying below
        // round-off, and those may come out slightly negative
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
        let clamped = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
        let mut eigvals = DVector::zeros(truncation);
        let mut eigvecs = DMatrix::zeros(d, truncation);
        for (k, &i) in order.iter().take(truncation).enumerate() {
            eigvals[k] = eig.eigenvalues[i].max(0.0);
            eigvecs.set_column(k, &eig.eigenvectors.column(i));
        }
        Ok(KlPrior1D {
            sigma2,
            length_scale,
            truncation,
            eigvals,
            eigvecs,
            gram,
            clamped,
        })
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let mut u = DVector::zeros(self.dim());
        for k in 0..self.truncation {
            let xi: f64 = rng.sample(StandardNormal);
            u += self.eigvecs.column(k) * (self.eigvals[k].sqrt() * xi);
        }
        u
    }

    /// The prior covariance as a factored SPD handle (pseudo-inverse solve on
    /// the numerically resolved span; the trailing kernel spectrum is
    /// round-off noise).
    pub fn covariance(&self) -> Result<Spd> {
        Spd::new_clamped(self.gram.clone())
    }

    /// Covariance of the truncated expansion itself.
    pub fn covariance_truncated(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.dim(), self.dim());
        for k in 0..self.truncation {
            let v = self.eigvecs.column(k);
            c += v * v.transpose() * self.eigvals[k];
        }
        c
    }
}

/// Cosine-basis prior on the `n x n` nodal grid of the unit square:
/// `lambda_j = (pi^2 (k^2 + l^2) + tau^2)^{-alpha}` with
/// `e_j(x) = cos(pi k x1) cos(pi l x2)`.
pub struct KlPrior2D {
    pub n: usize,
    pub tau: f64,
    pub alpha: f64,
    /// `(k, l)` pairs ordered by nondecreasing `k^2 + l^2`, ties
    /// lexicographic.
    pub modes: Vec<(usize, usize)>,
    pub lambdas: Vec<f64>,
    /// `n^2 x modes`, nodal values of each mode (row-major nodes:
    /// `idx = iy * n + ix`).
    pub mode_values: DMatrix<f64>,
}

impl KlPrior2D {
    pub fn new(n: usize, tau: f64, alpha: f64, terms: usize) -> Result<Self> {
        if n < 2 {
            return Err(EkiError::InvalidInput(format!(
                "2D grid needs n >= 2, got {n}"
            )));
        }
        if terms == 0 {
            return Err(EkiError::InvalidInput("need at least one mode".into()));
        }
        // Enumerate enough (k, l) pairs to cover `terms` after sorting.
        let mut pairs = Vec::new();
        let kmax = (terms as f64).sqrt().ceil() as usize + terms;
        for k in 1..=kmax {
            for l in 1..=kmax {
                pairs.push((k, l));
            }
        }
        pairs.sort_by_key(|&(k, l)| (k * k + l * l, k, l));
        pairs.truncate(terms);

        let lambdas: Vec<f64> = pairs
            .iter()
            .map(|&(k, l)| {
                (std::f64::consts::PI.powi(2) * (k * k + l * l) as f64 + tau * tau).powf(-alpha)
            })
            .collect();

        let h = 1.0 / (n - 1) as f64;
        let mut mode_values = DMatrix::zeros(n * n, terms);
        for (j, &(k, l)) in pairs.iter().enumerate() {
            for iy in 0..n {
                for ix in 0..n {
                    let x1 = ix as f64 * h;
                    let x2 = iy as f64 * h;
                    mode_values[(iy * n + ix, j)] = (std::f64::consts::PI * k as f64 * x1).cos()
                        * (std::f64::consts::PI * l as f64 * x2).cos();
                }
            }
        }
        Ok(KlPrior2D {
            n,
            tau,
            alpha,
            modes: pairs,
            lambdas,
            mode_values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let mut u = DVector::zeros(self.dim());
        for j in 0..self.modes.len() {
            let xi: f64 = rng.sample(StandardNormal);
            u += self.mode_values.column(j) * (self.lambdas[j].sqrt() * xi);
        }
        u
    }

    /// `sum_j lambda_j e_j e_j^T`, rank `<= terms`; solves act on its span.
    pub fn covariance(&self) -> Result<Spd> {
        let mut c = DMatrix::zeros(self.dim(), self.dim());
        for j in 0..self.modes.len() {
            let v = self.mode_values.column(j);
            c += v * v.transpose() * self.lambdas[j];
        }
        Spd::new_clamped(c)
    }
}
