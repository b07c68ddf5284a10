//! Particle ensembles, their empirical statistics, and the affine span they
//! generate.
//!
//! All empirical covariances use the 1/J normalization, matching the
//! continuous-time mean-field scaling used by the flows in [`crate::dynamics`];
//! none of the estimators here apply the 1/(J-1) sample correction.

use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};
use crate::linalg::span_basis;

/// `J` particles of dimension `d`, stored as the columns of a `d x J` matrix.
#[derive(Clone, Debug)]
pub struct Ensemble {
    particles: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(particles: DMatrix<f64>) -> Result<Self> {
        if particles.ncols() < 2 {
            return Err(EkiError::InvalidInput(format!(
                "ensemble needs at least 2 particles, got {}",
                particles.ncols()
            )));
        }
        if particles.nrows() == 0 {
            return Err(EkiError::InvalidInput("particle dimension is zero".into()));
        }
        Ok(Ensemble { particles })
    }

    pub fn from_columns(cols: &[DVector<f64>]) -> Result<Self> {
        if cols.len() < 2 {
            return Err(EkiError::InvalidInput(format!(
                "ensemble needs at least 2 particles, got {}",
                cols.len()
            )));
        }
        let d = cols[0].nrows();
        for (j, c) in cols.iter().enumerate() {
            if c.nrows() != d {
                return Err(EkiError::DimensionMismatch {
                    what: "Ensemble::from_columns",
                    expected: d,
                    actual: cols[j].nrows(),
                });
            }
        }
        Ensemble::new(DMatrix::from_columns(cols))
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    pub fn size(&self) -> usize {
        self.particles.ncols()
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn particle(&self, j: usize) -> DVector<f64> {
        self.particles.column(j).into_owned()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for j in 0..self.size() {
            m += self.particles.column(j);
        }
        m / self.size() as f64
    }

    /// Flat state vector: particle `j` occupies the slice `[j*d, (j+1)*d)`.
    /// This is the layout the time integrator advances.
    pub fn to_flat(&self) -> DVector<f64> {
        let (d, j) = (self.dim(), self.size());
        let mut flat = DVector::zeros(d * j);
        for c in 0..j {
            flat.rows_mut(c * d, d).copy_from(&self.particles.column(c));
        }
        flat
    }

    pub fn from_flat(flat: &DVector<f64>, d: usize, j: usize) -> Result<Self> {
        if flat.nrows() != d * j {
            return Err(EkiError::DimensionMismatch {
                what: "Ensemble::from_flat",
                expected: d * j,
                actual: flat.nrows(),
            });
        }
        let mut particles = DMatrix::zeros(d, j);
        for c in 0..j {
            particles.column_mut(c).copy_from(&flat.rows(c * d, d));
        }
        Ensemble::new(particles)
    }
}

/// Empirical moments of an ensemble paired with its forward-model images.
///
/// `spread` is `(1/J) sum_j |u_j - mean|^2 / 2`, which equals half the trace
/// of `cov`.
#[derive(Clone, Debug)]
pub struct EnsembleStats {
    pub mean: DVector<f64>,
    /// `d x J`, column `j` is `u_j - mean`.
    pub centered: DMatrix<f64>,
    /// `d x d`, `centered * centered^T / J`.
    pub cov: DMatrix<f64>,
    pub mean_g: DVector<f64>,
    /// `K x J`, column `j` is `G(u_j) - mean_g`.
    pub g_centered: DMatrix<f64>,
    /// `d x K`, `centered * g_centered^T / J`.
    pub cross_cov: DMatrix<f64>,
    pub spread: f64,
}

/// Recompute every moment from scratch. `g` holds `G(u_j)` as columns and may
/// have zero rows when no forward-model images are in play.
pub fn compute_stats(ens: &Ensemble, g: &DMatrix<f64>) -> Result<EnsembleStats> {
    let j = ens.size();
    if g.ncols() != j {
        return Err(EkiError::DimensionMismatch {
            what: "compute_stats (one forward image per particle)",
            expected: j,
            actual: g.ncols(),
        });
    }
    let jf = j as f64;
    let mean = ens.mean();
    let mut centered = ens.particles().clone();
    for c in 0..j {
        let mut col = centered.column_mut(c);
        col -= &mean;
    }

    let k = g.nrows();
    let mut mean_g = DVector::zeros(k);
    for c in 0..j {
        mean_g += g.column(c);
    }
    mean_g /= jf;
    let mut g_centered = g.clone();
    for c in 0..j {
        let mut col = g_centered.column_mut(c);
        col -= &mean_g;
    }

    let cov = &centered * centered.transpose() / jf;
    let cross_cov = &centered * g_centered.transpose() / jf;
    let spread = centered.iter().map(|x| x * x).sum::<f64>() / (2.0 * jf);

    Ok(EnsembleStats {
        mean,
        centered,
        cov,
        mean_g,
        g_centered,
        cross_cov,
        spread,
    })
}

/// The affine set `offset + span{u_j - mean}` generated by an ensemble.
///
/// The continuous-time flows never leave this set, so it is computed once
/// from the initial ensemble and used afterwards as a diagnostic and as the
/// search space for subspace-restricted reference solves.
#[derive(Clone, Debug)]
pub struct AffineSubspace {
    /// Component of the generating mean orthogonal to the span.
    pub offset: DVector<f64>,
    /// `d x r` with orthonormal columns.
    pub basis: DMatrix<f64>,
}

impl AffineSubspace {
    pub fn from_ensemble(ens: &Ensemble) -> Result<Self> {
        let mean = ens.mean();
        let mut centered = ens.particles().clone();
        for c in 0..ens.size() {
            let mut col = centered.column_mut(c);
            col -= &mean;
        }
        let basis = span_basis(&centered);
        if basis.ncols() == 0 {
            return Err(EkiError::DegenerateSpan(
                "all particles coincide; affine span has rank 0".into(),
            ));
        }
        let offset = &mean - &basis * (basis.transpose() * &mean);
        Ok(AffineSubspace { offset, basis })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Orthogonal projection of `v` onto the affine set.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let w = v - &self.offset;
        &self.offset + &self.basis * (self.basis.transpose() * w)
    }

    pub fn distance(&self, v: &DVector<f64>) -> f64 {
        (v - self.project(v)).norm()
    }
}

/// Largest distance of any particle from the affine set.
pub fn subspace_distance(ens: &Ensemble, sub: &AffineSubspace) -> Result<f64> {
    if ens.dim() != sub.offset.nrows() {
        return Err(EkiError::DimensionMismatch {
            what: "subspace_distance",
            expected: sub.offset.nrows(),
            actual: ens.dim(),
        });
    }
    Ok((0..ens.size())
        .map(|j| sub.distance(&ens.particle(j)))
        .fold(0.0, f64::max))
}

/// Smallest eigenvalue of `B^T cov B`, i.e. of the covariance restricted to
/// the span of the (orthonormal) basis `B`. Clamped at zero: round-off can
/// produce tiny negative values for collapsed ensembles.
pub fn min_eigenvalue_on_span(cov: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<f64> {
    if basis.ncols() == 0 {
        return Err(EkiError::DegenerateSpan(
            "cannot restrict covariance to an empty basis".into(),
        ));
    }
    if cov.nrows() != basis.nrows() {
        return Err(EkiError::DimensionMismatch {
            what: "min_eigenvalue_on_span",
            expected: cov.nrows(),
            actual: basis.nrows(),
        });
    }
    let restricted = basis.transpose() * cov * basis;
    let eig = nalgebra::SymmetricEigen::new(restricted);
    Ok(eig.eigenvalues.min().max(0.0))
}
