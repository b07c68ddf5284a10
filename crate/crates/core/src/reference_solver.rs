//! Interior-point-style reference solves: the barrier minimizer `u*^tau`,
//! the constrained KKT point `u*` obtained by penalty continuation, and the
//! KKT residuals used to certify both.
//!
//! Plain gradient descent with Armijo backtracking is deliberate: Hessians
//! exist only for some models, the problems are small, and a slow exact
//! oracle beats a fast approximate one here. Trial points that leave the
//! strict interior fail the line search like any other insufficient-decrease
//! step, so iterates can approach the boundary but never touch it.

use nalgebra::DVector;

use crate::constraints::{gradient_rows, ConstraintSet};
use crate::ensemble::AffineSubspace;
use crate::error::{EkiError, Result};
use crate::potentials::{BarrierPotential, RegularizedPotential};

pub const DEFAULT_TOL_GRAD: f64 = 1e-8;
const MAX_ITERATIONS: usize = 100_000;
const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
// plateau acceptance: the slope along -g must have flattened to at least
// this fraction of its starting magnitude without swinging further than
// the overshoot fraction past the one-dimensional minimizer
const WOLFE_FLAT: f64 = 0.9;
const WOLFE_OVERSHOOT: f64 = 0.8;
const MAX_BISECTIONS: usize = 60;
const MAX_BRACKET_GROWTH: usize = 200;

#[derive(Clone, Debug)]
pub struct BarrierSolveResult {
    pub minimizer: DVector<f64>,
    /// Barrier objective value at the minimizer.
    pub objective: f64,
    /// Norm of the (projected, when restricted) gradient at exit.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize the barrier objective by gradient descent with Armijo
/// backtracking, optionally restricted to an affine subspace (gradients are
/// projected onto the basis, so iterates never leave `offset + span`).
///
/// Hitting the iteration cap returns `converged = false` rather than an
/// error; an infeasible or out-of-subspace start is an error.
pub fn solve_barrier(
    bp: &BarrierPotential,
    x0: &DVector<f64>,
    subspace: Option<&AffineSubspace>,
    tol_grad: f64,
) -> Result<BarrierSolveResult> {
    if !(tol_grad > 0.0) {
        return Err(EkiError::InvalidInput(format!(
            "tol_grad must be positive, got {tol_grad}"
        )));
    }
    if !bp.constraints.strictly_feasible(x0) {
        return Err(EkiError::InfeasibleStart(format!(
            "solve_barrier start has feasibility margin {}",
            bp.constraints.feasibility_margin(x0)
        )));
    }
    if let Some(sub) = subspace {
        let dist = sub.distance(x0);
        if dist > 1e-8 * (1.0 + x0.norm()) {
            return Err(EkiError::InvalidInput(format!(
                "solve_barrier start is {dist:.3e} away from the affine subspace"
            )));
        }
    }

    let project = |g: &DVector<f64>| -> DVector<f64> {
        match subspace {
            Some(sub) => &sub.basis * (sub.basis.transpose() * g),
            None => g.clone(),
        }
    };

    let mut x = x0.clone();
    let mut fx = bp.phi_barrier(&x)?;
    let mut alpha_last = 1.0f64;
    let mut iterations = 0usize;
    // previous (x, g) pair for the curvature-scaled trial step
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;

    loop {
        let g = project(&bp.grad_phi_barrier(&x)?);
        let gn = g.norm();
        if gn <= tol_grad {
            return Ok(BarrierSolveResult {
                minimizer: x,
                objective: fx,
                grad_norm: gn,
                iterations,
                converged: true,
            });
        }
        if iterations >= MAX_ITERATIONS {
            return Ok(BarrierSolveResult {
                minimizer: x,
                objective: fx,
                grad_norm: gn,
                iterations,
                converged: false,
            });
        }
        iterations += 1;

        // seed the trial step from the secant curvature (s's/s'y): plain
        // fixed-fraction descent stalls on a float plateau around the
        // minimizer before the gradient can reach tol_grad, while a
        // curvature-scaled step converges through it
        let mut alpha = match &prev {
            Some((px, pg)) => {
                let s = &x - px;
                let yv = &g - pg;
                let sy = s.dot(&yv);
                if sy > 0.0 {
                    (s.dot(&s) / sy).clamp(1e-12, 1e6)
                } else {
                    (2.0 * alpha_last).min(1.0)
                }
            }
            None => 1.0,
        };
        // the first trial must move x by at least a few ulps, otherwise the
        // whole backtracking ray is a no-op
        alpha = alpha.max(16.0 * f64::EPSILON * (1.0 + x.norm()) / gn);
        let alpha_seed = alpha;
        let mut accepted = false;
        // near the minimum the mandated decrease c1*alpha*gn^2 drops below
        // the float resolution of the objective; steps that do not increase
        // the value are then still accepted so the iterate (and with it the
        // gradient) keeps refining
        let eps_f = 4.0 * f64::EPSILON * (1.0 + fx.abs());
        for _ in 0..MAX_HALVINGS {
            let trial = &x - alpha * &g;
            // once the step underflows below one ulp of x every further
            // halving repeats the same point; accepting it would freeze the
            // iteration (s = 0 kills the secant pair), so stop searching
            if trial == x {
                break;
            }
            // infeasible trials have value +inf and fail the test; points
            // inside the numerical margin are rejected explicitly so the
            // next gradient stays evaluable
            if bp.constraints.strictly_feasible(&trial) {
                let ft = bp.phi_barrier(&trial)?;
                let sufficient = ft <= fx && ft <= fx - ARMIJO_C1 * alpha * gn * gn + eps_f;
                // on the float plateau of the objective (mandated decrease
                // below resolution) the computed value jitters by an ulp and
                // can wall off the minimizer. The directional slope along -g
                // still resolves there and flattens exactly at the
                // one-dimensional minimizer however stiff the problem is,
                // while the gradient norm need not shrink along a descent
                // step near a steep barrier wall; a trial whose slope has
                // flattened without crossing far past that minimizer is
                // therefore accepted as long as the value stays inside the
                // resolution band. g already lies in the span of the active
                // subspace, so the dot product projects the trial gradient
                // by itself.
                let plateau = !sufficient
                    && ARMIJO_C1 * alpha * gn * gn <= eps_f
                    && ft <= fx + eps_f
                    && {
                        let slope = -g.dot(&bp.grad_phi_barrier(&trial)?);
                        slope >= -WOLFE_FLAT * gn * gn && slope <= WOLFE_OVERSHOOT * gn * gn
                    };
                if sufficient || plateau {
                    prev = Some((x.clone(), g.clone()));
                    x = trial;
                    fx = ft.min(fx);
                    alpha_last = alpha;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            // halving missed both windows: when the seed starts below the
            // slope-flattening window every halving moves further away from
            // it, so search upward instead. Bracket then bisect the largest
            // step that stays strictly feasible, keeps the value inside the
            // resolution band, and has not crossed the one-dimensional
            // minimizer (slope along -g still nonpositive); that step is a
            // genuine descent step at float resolution.
            let too_far = |a: f64| -> Result<bool> {
                let trial = &x - a * &g;
                if !bp.constraints.strictly_feasible(&trial) {
                    return Ok(true);
                }
                if bp.phi_barrier(&trial)? > fx + eps_f {
                    return Ok(true);
                }
                Ok(-g.dot(&bp.grad_phi_barrier(&trial)?) > 0.0)
            };
            let mut lo = 0.0f64;
            let mut hi = alpha_seed;
            let mut grew = 0usize;
            while !too_far(hi)? {
                lo = hi;
                hi *= 2.0;
                grew += 1;
                if grew >= MAX_BRACKET_GROWTH {
                    break;
                }
            }
            for _ in 0..MAX_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if too_far(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let trial = &x - lo * &g;
            if lo > 0.0 && trial != x {
                let ft = bp.phi_barrier(&trial)?;
                prev = Some((x.clone(), g.clone()));
                x = trial;
                fx = ft.min(fx);
                alpha_last = lo;
                accepted = true;
            }
        }
        if !accepted {
            // no movement survives the resolution band at one-ulp steps:
            // the gradient test above decides on the final iterate
            return Ok(BarrierSolveResult {
                objective: fx,
                grad_norm: gn,
                iterations,
                converged: false,
                minimizer: x,
            });
        }
    }
}

#[derive(Clone, Debug)]
pub struct KKTReport {
    pub point: DVector<f64>,
    pub multipliers: DVector<f64>,
    /// `|| grad Phi_reg(u) + sum_j lambda_j grad h_j(u) ||`.
    pub stationarity_norm: f64,
    /// `max_j |lambda_j h_j(u)|`.
    pub complementarity: f64,
    /// Positive part of `max_j h_j(u)`: zero when feasible.
    pub primal_feasibility: f64,
    /// Whether every supplied multiplier is nonnegative.
    pub multipliers_nonnegative: bool,
}

/// Evaluate the three KKT residuals at `(u, multipliers)`. Never iterates;
/// negative multipliers are flagged, not rejected.
pub fn kkt_residual(
    pot: &RegularizedPotential,
    cs: &ConstraintSet,
    u: &DVector<f64>,
    multipliers: &DVector<f64>,
) -> Result<KKTReport> {
    if multipliers.nrows() != cs.len() {
        return Err(EkiError::DimensionMismatch {
            what: "kkt_residual (multipliers)",
            expected: cs.len(),
            actual: multipliers.nrows(),
        });
    }
    let grad = pot.grad_phi_reg(u)?;
    let rows = gradient_rows(cs, u);
    let stationarity = (&grad + rows.transpose() * multipliers).norm();
    let h = cs.values(u);
    let complementarity = (0..cs.len())
        .map(|j| (multipliers[j] * h[j]).abs())
        .fold(0.0, f64::max);
    let primal = h.iter().copied().fold(0.0, f64::max);
    Ok(KKTReport {
        point: u.clone(),
        multipliers: multipliers.clone(),
        stationarity_norm: stationarity,
        complementarity,
        primal_feasibility: primal,
        multipliers_nonnegative: multipliers.iter().all(|&l| l >= 0.0),
    })
}

/// Default continuation ladder: `1, 10, ..., 1e6`.
pub fn default_tau_ladder() -> Vec<f64> {
    (0..=6).map(|k| 10f64.powi(k)).collect()
}

/// Approximate the constrained minimizer by warm-started barrier solves
/// along an increasing `tau` ladder, recovering multipliers from the final
/// central-path point as `lambda_j = -1 / (tau_final h_j(u))`.
pub fn solve_constrained(
    pot: &RegularizedPotential,
    cs: &ConstraintSet,
    x0: &DVector<f64>,
    tau_ladder: &[f64],
    subspace: Option<&AffineSubspace>,
) -> Result<KKTReport> {
    if tau_ladder.is_empty() {
        return Err(EkiError::InvalidInput("empty tau ladder".into()));
    }
    for w in tau_ladder.windows(2) {
        if !(w[1] > w[0]) {
            return Err(EkiError::InvalidInput(
                "tau ladder must be strictly increasing".into(),
            ));
        }
    }
    let mut x = x0.clone();
    let mut tau_final = tau_ladder[0];
    for (stage, &tau) in tau_ladder.iter().enumerate() {
        let bp = BarrierPotential::new(pot.clone(), cs.clone(), tau)?;
        let res = solve_barrier(&bp, &x, subspace, DEFAULT_TOL_GRAD).map_err(|e| {
            EkiError::LadderStage {
                stage,
                tau,
                source: Box::new(e),
            }
        })?;
        if !res.converged {
            return Err(EkiError::LadderStage {
                stage,
                tau,
                source: Box::new(EkiError::LineSearchFailure {
                    iter: res.iterations,
                    halvings: MAX_HALVINGS,
                }),
            });
        }
        x = res.minimizer;
        tau_final = tau;
    }
    let h = cs.values(&x);
    let multipliers = DVector::from_fn(cs.len(), |j, _| -1.0 / (tau_final * h[j]));
    kkt_residual(pot, cs, &x, &multipliers)
}
