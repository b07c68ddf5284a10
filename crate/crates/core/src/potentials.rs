//! Data-misfit potentials, Tikhonov regularization, and their barrier-
//! augmented versions.
//!
//! Weighted norms follow `|x|^2_S = <x, S^{-1} x>`:
//!
//! * `phi_misfit(u) = 0.5 |G(u) - y|^2_Gamma`
//! * `phi_reg(u)    = phi_misfit(u) + (lambda/2) |u|^2_C0`
//! * `phi_barrier(u) = phi_reg(u) - (1/tau) sum_i log(-h_i(u))`
//!
//! The regularization strength `lambda` is explicit everywhere (potential,
//! gradient, and the flow drifts in [`crate::dynamics`]) rather than folded
//! into `C0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;
use crate::error::{EkiError, Result};
use crate::linalg::Spd;

/// A forward operator together with the data and covariances of its inverse
/// problem.
pub trait ForwardModel: Send + Sync {
    fn dim_u(&self) -> usize;
    fn dim_obs(&self) -> usize;

    fn apply(&self, u: &DVector<f64>) -> DVector<f64>;

    /// Dense Jacobian `DG(u)`, if the model provides one. The ensemble flows
    /// never call this; only gradient-based reference solves and diagnostics
    /// do.
    fn jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// `DG(u)^T w`. Models with cheap adjoints override this; the default
    /// falls back to the dense Jacobian.
    fn vjp(&self, u: &DVector<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
        self.jacobian(u).map(|j| j.transpose() * w)
    }

    fn data(&self) -> &DVector<f64>;
    fn noise_cov(&self) -> &Spd;
    fn prior_cov(&self) -> &Spd;
}

/// Tikhonov-regularized least-squares potential for one forward model.
#[derive(Clone)]
pub struct RegularizedPotential {
    pub model: Arc<dyn ForwardModel>,
    pub lambda: f64,
}

impl RegularizedPotential {
    pub fn new(model: Arc<dyn ForwardModel>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(EkiError::InvalidInput(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        let k = model.dim_obs();
        if model.data().nrows() != k {
            return Err(EkiError::DimensionMismatch {
                what: "RegularizedPotential (data length)",
                expected: k,
                actual: model.data().nrows(),
            });
        }
        if model.noise_cov().dim() != k {
            return Err(EkiError::DimensionMismatch {
                what: "RegularizedPotential (noise covariance)",
                expected: k,
                actual: model.noise_cov().dim(),
            });
        }
        if model.prior_cov().dim() != model.dim_u() {
            return Err(EkiError::DimensionMismatch {
                what: "RegularizedPotential (prior covariance)",
                expected: model.dim_u(),
                actual: model.prior_cov().dim(),
            });
        }
        Ok(RegularizedPotential { model, lambda })
    }

    fn check_dim(&self, u: &DVector<f64>) -> Result<()> {
        if u.nrows() != self.model.dim_u() {
            return Err(EkiError::DimensionMismatch {
                what: "potential evaluation",
                expected: self.model.dim_u(),
                actual: u.nrows(),
            });
        }
        Ok(())
    }

    pub fn phi_misfit(&self, u: &DVector<f64>) -> Result<f64> {
        self.check_dim(u)?;
        let r = self.model.apply(u) - self.model.data();
        Ok(0.5 * self.model.noise_cov().quad(&r))
    }

    pub fn phi_reg(&self, u: &DVector<f64>) -> Result<f64> {
        let misfit = self.phi_misfit(u)?;
        Ok(misfit + 0.5 * self.lambda * self.model.prior_cov().quad(u))
    }

    /// `DG(u)^T Gamma^{-1} (G(u) - y)`.
    pub fn grad_misfit(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(u)?;
        let r = self.model.apply(u) - self.model.data();
        let w = self.model.noise_cov().solve(&r);
        self.model
            .vjp(u, &w)
            .ok_or(EkiError::JacobianUnavailable)
    }

    /// `grad phi_misfit + lambda * C0^{-1} u`.
    pub fn grad_phi_reg(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = self.grad_misfit(u)?;
        if self.lambda != 0.0 {
            g += self.model.prior_cov().solve(u) * self.lambda;
        }
        Ok(g)
    }
}

/// `phi_reg` plus a log-barrier for a constraint set at penalty `tau`.
#[derive(Clone)]
pub struct BarrierPotential {
    pub reg: RegularizedPotential,
    pub constraints: ConstraintSet,
    pub tau: f64,
}

impl BarrierPotential {
    pub fn new(reg: RegularizedPotential, constraints: ConstraintSet, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(EkiError::InvalidInput(format!(
                "barrier requires tau > 0, got {tau}"
            )));
        }
        if !constraints.is_empty() && constraints.dim() != reg.model.dim_u() {
            return Err(EkiError::DimensionMismatch {
                what: "BarrierPotential (constraint dimension)",
                expected: reg.model.dim_u(),
                actual: constraints.dim(),
            });
        }
        Ok(BarrierPotential {
            reg,
            constraints,
            tau,
        })
    }

    /// `+inf` off the strict interior; finite elsewhere.
    pub fn phi_barrier(&self, u: &DVector<f64>) -> Result<f64> {
        let base = self.reg.phi_reg(u)?;
        Ok(base + self.constraints.barrier_value(u, self.tau))
    }

    /// Defined only strictly inside the feasible set; near-boundary points
    /// surface as [`EkiError::FeasibilityMargin`].
    pub fn grad_phi_barrier(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let drift = self.constraints.barrier_drift(u, self.tau)?;
        Ok(self.reg.grad_phi_reg(u)? - drift)
    }
}

/// Report from sampling the analytic Hessian of the pseudolinear potential
/// `0.5 |A u + eps sin(u) - y|^2 + (lambda/2) |u|^2` (identity noise and
/// prior covariances) over a ball.
#[derive(Clone, Debug)]
pub struct StrongConvexityReport {
    /// `((4 + radius) max|A_ij| + max|y_i|) eps + eps^2`; strong convexity on
    /// the ball is guaranteed for any `lambda` above this.
    pub threshold: f64,
    pub lambda: f64,
    pub satisfied: bool,
    /// Smallest Hessian eigenvalue seen across the sampled points.
    pub min_eig_sampled: f64,
    pub points: usize,
}

/// Analytic Hessian of the pseudolinear potential at `x`:
/// `J^T J + diag(-eps sin(x_i) r_i) + lambda I` with `J = A + eps diag(cos x)`
/// and `r = A x + eps sin(x) - y`.
pub fn pseudolinear_hessian(
    a: &DMatrix<f64>,
    eps: f64,
    lambda: f64,
    y: &DVector<f64>,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let d = a.nrows();
    let sin_x = x.map(f64::sin);
    let cos_x = x.map(f64::cos);
    let r = a * x + &sin_x * eps - y;
    let mut jac = a.clone();
    for i in 0..d {
        jac[(i, i)] += eps * cos_x[i];
    }
    let mut h = jac.transpose() * &jac;
    for i in 0..d {
        h[(i, i)] += -eps * sin_x[i] * r[i] + lambda;
    }
    h
}

/// Check `lambda` against the closed-form strong-convexity threshold for the
/// pseudolinear potential on the ball `|x| <= radius`, and sample the
/// analytic Hessian at `points` seeded locations in that ball.
pub fn check_strong_convexity_pseudolinear(
    a: &DMatrix<f64>,
    eps: f64,
    lambda: f64,
    y: &DVector<f64>,
    radius: f64,
    points: usize,
    seed: u64,
) -> Result<StrongConvexityReport> {
    use rand::{Rng, SeedableRng};
    if a.nrows() != a.ncols() {
        return Err(EkiError::DimensionMismatch {
            what: "check_strong_convexity_pseudolinear (square A)",
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    if y.nrows() != a.nrows() {
        return Err(EkiError::DimensionMismatch {
            what: "check_strong_convexity_pseudolinear (y)",
            expected: a.nrows(),
            actual: y.nrows(),
        });
    }
    if !(radius > 0.0) || !(eps >= 0.0) {
        return Err(EkiError::InvalidInput(
            "radius must be positive and eps non-negative".into(),
        ));
    }
    let a_max = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let y_max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = ((4.0 + radius) * a_max + y_max) * eps + eps * eps;

    let d = a.nrows();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut min_eig = f64::INFINITY;
    for _ in 0..points {
        // uniform direction, radius scaled for uniformity in the ball
        let mut v = DVector::from_fn(d, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let n = v.norm();
        if n == 0.0 {
            continue;
        }
        v /= n;
        let scale = radius * rng.gen_range(0.0..1.0f64).powf(1.0 / d as f64);
        let x = v * scale;
        let h = pseudolinear_hessian(a, eps, lambda, y, &x);
        let eig = nalgebra::SymmetricEigen::new(h);
        min_eig = min_eig.min(eig.eigenvalues.min());
    }
    Ok(StrongConvexityReport {
        threshold,
        lambda,
        satisfied: lambda > threshold,
        min_eig_sampled: min_eig,
        points,
    })
}
