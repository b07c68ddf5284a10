//! Post-run analysis: spread-collapse bound overlays, log-log rate fits,
//! gradient-flow approximation scaling, and the constants that parameterize
//! the collapse bounds.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::CheckpointRow;
use crate::dynamics::{gradient_flow_discrepancy, FlowSpec};
use crate::error::{EkiError, Result};
use crate::integrator::FlowTrajectory;
use crate::linalg::{ls_slope, Spd};

/// Constants of the spread-decay bounds, computed from the prior and noise
/// covariances and the run's initial spread. The lower-bound constants
/// (`a`, `w`, `k1`, `t_circ`) depend on a Lipschitz estimate and a chosen
/// reference time, so they stay unset until `fill_lower_bound` provides
/// them; `mu` and `l` are curvature estimates filled in the same way.
///
/// `sigma_min`/`sigma_max` are the extreme eigenvalues of the inverse prior
/// covariance on its range: the Tikhonov term contracts every ensemble
/// direction at least `sigma_min`-fast (that drives the upper bound) and at
/// most `sigma_max`-fast (that drives the lower bound).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Largest eigenvalue of the inverse noise covariance.
    pub lambda_max: f64,
    pub j: usize,
    pub v_e0: f64,
    /// `V_e(0)^{-1} J / (2 sigma_min)`.
    pub b: f64,
    /// `2 sigma_max`.
    pub c: f64,
    pub a: Option<f64>,
    pub w: Option<f64>,
    pub k1: Option<f64>,
    pub t_circ: Option<f64>,
    pub mu: Option<f64>,
    pub l: Option<f64>,
}

impl TheoryConstants {
    pub fn compute(c0: &Spd, gamma: &Spd, j: usize, v_e0: f64) -> Result<Self> {
        if j < 2 {
            return Err(EkiError::InvalidInput(format!(
                "need at least 2 particles, got {j}"
            )));
        }
        if !(v_e0 > 0.0) {
            return Err(EkiError::InvalidInput(format!(
                "initial spread must be positive, got {v_e0}"
            )));
        }
        let sigma_min = 1.0 / c0.eig_max();
        // rank-deficient priors (truncated expansions) carry float-noise
        // trailing eigenvalues; the inverse only acts on the retained range
        let sigma_max = 1.0 / c0.eig_min_pos();
        let lambda_max = 1.0 / gamma.eig_min();
        let b = (1.0 / v_e0) * j as f64 / (2.0 * sigma_min);
        Ok(TheoryConstants {
            sigma_min,
            sigma_max,
            lambda_max,
            j,
            v_e0,
            b,
            c: 2.0 * sigma_max,
            a: None,
            w: None,
            k1: None,
            t_circ: None,
            mu: None,
            l: None,
        })
    }

    /// Derive the lower-bound constants from a Lipschitz estimate `c_lip`,
    /// the inflation value `rho_tc` and the span eigenvalue `eta_tc`
    /// observed at the chosen reference time `t_circ`. Fails when the decay
    /// exponent `a` reaches one, in which case no algebraic lower bound of
    /// this family holds.
    pub fn fill_lower_bound(
        &mut self,
        c_lip: f64,
        rho_tc: f64,
        eta_tc: f64,
        t_circ: f64,
    ) -> Result<()> {
        if !(eta_tc > 0.0) {
            return Err(EkiError::InvalidInput(format!(
                "span eigenvalue at the reference time must be positive, got {eta_tc}"
            )));
        }
        let a =
            (1.0 - rho_tc) * c_lip * c_lip * self.lambda_max * self.j as f64 / self.sigma_min;
        if !(a < 1.0) {
            return Err(EkiError::InvalidInput(format!(
                "decay exponent a = {a} is not below one; increase inflation or \
                 pick a later reference time"
            )));
        }
        let w = 1.0 - a;
        let k1 = (w - eta_tc * self.c * self.b) / (w * self.b.powf(a) * eta_tc);
        self.a = Some(a);
        self.w = Some(w);
        self.k1 = Some(k1);
        self.t_circ = Some(t_circ);
        Ok(())
    }

    /// Upper bound on the spread at time `t`.
    pub fn collapse_bound(&self, t: f64) -> f64 {
        1.0 / ((2.0 * self.sigma_min / self.j as f64) * t + 1.0 / self.v_e0)
    }

    /// Lower bound on the span eigenvalue at time `t`, once the lower-bound
    /// constants are filled.
    pub fn span_lower_bound(&self, t: f64) -> Option<f64> {
        let (w, k1) = (self.w?, self.k1?);
        Some(w / ((self.c + w * k1.max(0.0)) * (t + self.b)))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollapseOverlay {
    pub bounds: Vec<f64>,
    pub violations: usize,
    pub max_relative_excess: f64,
}

/// Evaluate the spread upper bound at every checkpoint and count violations
/// beyond the given relative slack (0.05 for the standard check).
pub fn collapse_bound_overlay(
    rows: &[CheckpointRow],
    constants: &TheoryConstants,
    slack: f64,
) -> Result<CollapseOverlay> {
    if rows.is_empty() {
        return Err(EkiError::InvalidInput("empty record".into()));
    }
    let mut bounds = Vec::with_capacity(rows.len());
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for row in rows {
        let bound = constants.collapse_bound(row.t);
        let excess = row.v_e / bound - 1.0;
        max_excess = max_excess.max(excess);
        if excess > slack {
            violations += 1;
        }
        bounds.push(bound);
    }
    Ok(CollapseOverlay {
        bounds,
        violations,
        max_relative_excess: max_excess,
    })
}

/// Which record column a rate is fitted on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateField {
    Spread,
    ErrParam,
    ErrObs,
}

impl RateField {
    fn get(self, row: &CheckpointRow) -> Option<f64> {
        match self {
            RateField::Spread => Some(row.v_e),
            RateField::ErrParam => row.err_param,
            RateField::ErrObs => row.err_obs,
        }
    }
}

/// Least-squares slope of `log(field)` against `log(t)` over the last
/// `window` fraction of the logarithmic time axis. At least 10 checkpoints
/// must land in the window and every value must be positive.
pub fn rate_estimate(rows: &[CheckpointRow], field: RateField, window: f64) -> Result<f64> {
    if !(0.0 < window && window <= 1.0) {
        return Err(EkiError::InvalidInput(format!(
            "window fraction must be in (0, 1], got {window}"
        )));
    }
    let positive_t: Vec<&CheckpointRow> = rows.iter().filter(|r| r.t > 0.0).collect();
    if positive_t.len() < 2 {
        return Err(EkiError::UndefinedRate(
            "need at least two positive-time checkpoints".into(),
        ));
    }
    let l0 = positive_t.first().unwrap().t.ln();
    let l1 = positive_t.last().unwrap().t.ln();
    let cut = l1 - window * (l1 - l0);
    let mut lt = Vec::new();
    let mut lv = Vec::new();
    for row in positive_t {
        if row.t.ln() < cut {
            continue;
        }
        let v = field
            .get(row)
            .ok_or_else(|| EkiError::UndefinedRate("field absent from record".into()))?;
        if !(v > 0.0) {
            return Err(EkiError::UndefinedRate(format!(
                "nonpositive value {v} at t = {}",
                row.t
            )));
        }
        lt.push(row.t.ln());
        lv.push(v.ln());
    }
    if lt.len() < 10 {
        return Err(EkiError::UndefinedRate(format!(
            "only {} checkpoints in the fit window, need 10",
            lt.len()
        )));
    }
    ls_slope(&lt, &lv)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradFlowScaling {
    /// Fitted exponent of the discrepancy against the spread.
    pub exponent: f64,
    /// Largest `Err / (sqrt(misfit at mean) * V_e^{3/2})` over the
    /// checkpoints entering the fit.
    pub max_ratio: f64,
    pub errs: Vec<f64>,
}

/// Gap between the ensemble drift and the preconditioned gradient flow,
/// evaluated at every recorded ensemble, fitted against the spread.
///
/// Checkpoints where the discrepancy is at float-noise level (relative to
/// the drift scale) are excluded from the fit but still reported in `errs`.
pub fn grad_flow_error_scaling(
    flow: &FlowSpec,
    traj: &FlowTrajectory,
) -> Result<GradFlowScaling> {
    if traj.ensembles.is_empty() {
        return Err(EkiError::InvalidInput("empty trajectory".into()));
    }
    let mut errs = Vec::with_capacity(traj.ensembles.len());
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for ens in &traj.ensembles {
        let stats = flow.stats(ens)?;
        let err = gradient_flow_discrepancy(&stats, flow.model.as_ref())?;
        let resid = &stats.mean_g - flow.model.data();
        let misfit = 0.5 * flow.model.noise_cov().quad(&resid);
        let v = stats.spread;
        if v > 0.0 && misfit > 0.0 {
            let ratio = err / (misfit.sqrt() * v.powf(1.5));
            max_ratio = max_ratio.max(ratio);
        }
        // the fit needs genuinely nonlinear discrepancies; exact-linear
        // models produce pure round-off here
        let scale = stats.cross_cov.norm() + stats.cov.norm();
        if err > 1e-13 * (1.0 + scale) && v > 0.0 {
            lx.push(v.ln());
            ly.push(err.ln());
        }
        errs.push(err);
    }
    if lx.len() < 3 {
        return Err(EkiError::UndefinedRate(
            "too few checkpoints with resolvable discrepancy".into(),
        ));
    }
    let exponent = ls_slope(&lx, &ly)?;
    Ok(GradFlowScaling {
        exponent,
        max_ratio,
        errs,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlReport {
    pub points: usize,
    pub violations: usize,
    pub mu: f64,
    /// Largest value of `(gap) - nu ||grad||^2` observed; nonpositive when
    /// the inequality holds everywhere.
    pub worst_slack: f64,
}

/// Check `nu ||grad Phi||^2 >= Phi - Phi_min` with `nu = 1/(2 mu)` on the
/// quadratic `Phi(x) = 0.5 x^T H x` at seeded sample points in a ball of the
/// given radius.
pub fn pl_check_quadratic(
    h: &DMatrix<f64>,
    radius: f64,
    points: usize,
    seed: u64,
) -> Result<PlReport> {
    if h.nrows() != h.ncols() {
        return Err(EkiError::DimensionMismatch {
            what: "pl_check_quadratic (square matrix)",
            expected: h.nrows(),
            actual: h.ncols(),
        });
    }
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let mu = eig.eigenvalues.min();
    if !(mu > 0.0) {
        return Err(EkiError::InvalidInput(format!(
            "quadratic is not strongly convex (min eigenvalue {mu})"
        )));
    }
    let nu = 1.0 / (2.0 * mu);
    let d = h.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..points {
        let x = nalgebra::DVector::from_fn(d, |_, _| {
            rng.gen_range(-1.0..1.0f64) * radius
        });
        let g = h * &x;
        let gap = 0.5 * x.dot(&g);
        let slack = gap - nu * g.norm_squared();
        worst = worst.max(slack);
        if slack > 1e-12 * (1.0 + gap.abs()) {
            violations += 1;
        }
    }
    Ok(PlReport {
        points,
        violations,
        mu,
        worst_slack: worst,
    })
}
