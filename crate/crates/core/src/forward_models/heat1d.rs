//! One implicit-Euler step of the 1D heat equation on (0, 1) with
//! homogeneous Dirichlet boundaries, mapping a source term to the resulting
//! temperature profile on the interior grid.
//!
//! `A = dt (I - dt D2)^{-1}` with `D2` the three-point Laplacian, so `A` is
//! symmetric positive definite. The observation grid equals the parameter
//! grid (all interior nodes).

use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};

pub struct Heat1DOperator {
    a: DMatrix<f64>,
    grid: DVector<f64>,
    dx: f64,
    dt: f64,
}

/// Assemble the one-step solution operator on a grid of spacing `dx`.
/// `1/dx` must be an integer number of cells; the interior has
/// `1/dx - 1` nodes.
pub fn build_heat1d(dx: f64, dt: f64) -> Result<Heat1DOperator> {
    if !(dx > 0.0 && dx < 0.5) || !(dt > 0.0) {
        return Err(EkiError::InvalidInput(format!(
            "heat operator requires 0 < dx < 0.5 and dt > 0, got dx={dx}, dt={dt}"
        )));
    }
    let cells = 1.0 / dx;
    if (cells - cells.round()).abs() > 1e-9 {
        return Err(EkiError::InvalidInput(format!(
            "1/dx must be an integer cell count, got {cells}"
        )));
    }
    let d = cells.round() as usize - 1;
    if d < 1 {
        return Err(EkiError::InvalidInput("grid has no interior nodes".into()));
    }

    // I - dt * D2, tridiagonal, strictly diagonally dominant SPD.
    let r = dt / (dx * dx);
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = 1.0 + 2.0 * r;
        if i > 0 {
            m[(i, i - 1)] = -r;
        }
        if i + 1 < d {
            m[(i, i + 1)] = -r;
        }
    }
    let chol = nalgebra::Cholesky::new(m).ok_or_else(|| {
        EkiError::Factorization("heat operator matrix not positive definite".into())
    })?;
    let a = chol.solve(&(DMatrix::identity(d, d) * dt));
    // Solving column by column leaves round-off asymmetry; restore exact
    // symmetry so downstream spectral arguments hold to machine precision.
    let a = (&a + a.transpose()) * 0.5;
    let grid = DVector::from_fn(d, |i, _| (i + 1) as f64 * dx);
    Ok(Heat1DOperator { a, grid, dx, dt })
}

impl Heat1DOperator {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.a
    }

    /// Interior node coordinates, `x_i = (i+1) dx`.
    pub fn grid(&self) -> &DVector<f64> {
        &self.grid
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}
