//! Exactly linear forward map `G(u) = A u`, mostly used by tests and by the
//! diagnostics that need a case with zero linearization error.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};
use crate::linalg::Spd;
use crate::potentials::ForwardModel;

pub struct LinearModel {
    a: DMatrix<f64>,
    data: DVector<f64>,
    gamma: Arc<Spd>,
    c0: Arc<Spd>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, data: DVector<f64>, gamma: Spd, c0: Spd) -> Result<Self> {
        Self::from_arcs(a, data, Arc::new(gamma), Arc::new(c0))
    }

    pub fn from_arcs(
        a: DMatrix<f64>,
        data: DVector<f64>,
        gamma: Arc<Spd>,
        c0: Arc<Spd>,
    ) -> Result<Self> {
        if data.nrows() != a.nrows() {
            return Err(EkiError::DimensionMismatch {
                what: "LinearModel (data rows)",
                expected: a.nrows(),
                actual: data.nrows(),
            });
        }
        if gamma.dim() != a.nrows() || c0.dim() != a.ncols() {
            return Err(EkiError::DimensionMismatch {
                what: "LinearModel (covariance dims)",
                expected: a.nrows(),
                actual: gamma.dim(),
            });
        }
        Ok(LinearModel { a, data, gamma, c0 })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn prior_cov_arc(&self) -> Arc<Spd> {
        Arc::clone(&self.c0)
    }
}

impl ForwardModel for LinearModel {
    fn dim_u(&self) -> usize {
        self.a.ncols()
    }

    fn dim_obs(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.a * u
    }

    fn jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }

    fn vjp(&self, _u: &DVector<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.a.transpose() * w)
    }

    fn data(&self) -> &DVector<f64> {
        &self.data
    }

    fn noise_cov(&self) -> &Spd {
        &self.gamma
    }

    fn prior_cov(&self) -> &Spd {
        &self.c0
    }
}
