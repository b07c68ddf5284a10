//! Convex inequality constraints `h_i(u) <= 0`, log-barrier evaluation, and
//! the barrier drift used by the constrained flows.
//!
//! Sign conventions, fixed here and relied on everywhere else:
//!
//! * feasible set: `h_i(u) <= 0` for all `i`, strict interior `h_i < 0`;
//! * barrier value: `-(1/tau) * sum_i log(-h_i(u))`, `+inf` off the strict
//!   interior (a sentinel, not an error);
//! * barrier drift: `(1/tau) * sum_i grad h_i(u) / h_i(u)`, which equals
//!   minus the gradient of the barrier value. Each term points *into* the
//!   feasible set since `h_i < 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};
use crate::linalg::Spd;

/// A single smooth convex constraint `h(u) <= 0`.
#[derive(Clone)]
pub enum ConvexConstraint {
    /// `a . u + b <= 0`
    Affine { a: DVector<f64>, b: f64 },
    /// `0.5 <u, C^{-1} u> - radius <= 0`
    NormBall { cov: Arc<Spd>, radius: f64 },
    /// User-supplied value/gradient pair. The caller is responsible for
    /// convexity; nothing here checks it.
    Custom {
        name: String,
        #[allow(clippy::type_complexity)]
        value: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
        #[allow(clippy::type_complexity)]
        grad: Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
    },
}

impl std::fmt::Debug for ConvexConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConvexConstraint::Affine { a, b } => {
                write!(f, "Affine(dim={}, b={})", a.nrows(), b)
            }
            ConvexConstraint::NormBall { radius, .. } => write!(f, "NormBall(r={radius})"),
            ConvexConstraint::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl ConvexConstraint {
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        match self {
            ConvexConstraint::Affine { a, b } => a.dot(u) + b,
            ConvexConstraint::NormBall { cov, radius } => 0.5 * cov.quad(u) - radius,
            ConvexConstraint::Custom { value, .. } => value(u),
        }
    }

    pub fn grad(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            ConvexConstraint::Affine { a, .. } => a.clone(),
            ConvexConstraint::NormBall { cov, .. } => cov.solve(u),
            ConvexConstraint::Custom { grad, .. } => grad(u),
        }
    }
}

/// Componentwise bounds `lower_i <= u_i <= upper_i` on a subset of
/// components.
#[derive(Clone, Debug)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Constrained component indices; same length as `lower`/`upper`.
    pub indices: Vec<usize>,
}

impl BoxBounds {
    /// Bounds on every component of a `d`-dimensional state.
    pub fn full(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let idx = (0..lower.nrows()).collect();
        BoxBounds::on_components(lower, upper, idx)
    }

    /// Uniform scalar bounds `[a, b]` on every component.
    pub fn uniform(dim: usize, a: f64, b: f64) -> Result<Self> {
        BoxBounds::full(
            DVector::from_element(dim, a),
            DVector::from_element(dim, b),
        )
    }

    pub fn on_components(
        lower: DVector<f64>,
        upper: DVector<f64>,
        indices: Vec<usize>,
    ) -> Result<Self> {
        if lower.nrows() != upper.nrows() || lower.nrows() != indices.len() {
            return Err(EkiError::DimensionMismatch {
                what: "BoxBounds (lower/upper/indices lengths)",
                expected: lower.nrows(),
                actual: upper.nrows().max(indices.len()),
            });
        }
        for i in 0..lower.nrows() {
            if !(lower[i] < upper[i]) {
                return Err(EkiError::InvalidBounds {
                    index: indices[i],
                    lower: lower[i],
                    upper: upper[i],
                });
            }
        }
        Ok(BoxBounds {
            lower,
            upper,
            indices,
        })
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }
}

/// Clamp the constrained components of `u` into the box. Unconstrained
/// components pass through.
pub fn project_box(bounds: &BoxBounds, u: &DVector<f64>) -> DVector<f64> {
    let mut out = u.clone();
    for (k, &i) in bounds.indices.iter().enumerate() {
        out[i] = out[i].clamp(bounds.lower[k], bounds.upper[k]);
    }
    out
}

/// An ordered family of convex constraints sharing one barrier.
#[derive(Clone, Debug, Default)]
pub struct ConstraintSet {
    constraints: Vec<ConvexConstraint>,
    dim: usize,
}

/// Strict-feasibility margin: points with `h_i(u) >= -eps_feas` are treated
/// as "on the boundary" for the purpose of drift evaluation, which is how
/// near-boundary states surface as integrator step rejections instead of
/// overflowing the barrier terms.
fn eps_feas(h: f64) -> f64 {
    1e-10 * (1.0 + h.abs())
}

impl ConstraintSet {
    pub fn new(dim: usize, constraints: Vec<ConvexConstraint>) -> Self {
        ConstraintSet { constraints, dim }
    }

    pub fn empty(dim: usize) -> Self {
        ConstraintSet {
            constraints: Vec::new(),
            dim,
        }
    }

    /// Two affine constraints per bounded component:
    /// `lower_i - u_i <= 0` and `u_i - upper_i <= 0`.
    pub fn make_box(dim: usize, bounds: &BoxBounds) -> Result<Self> {
        let mut cs = Vec::with_capacity(2 * bounds.indices.len());
        for (k, &i) in bounds.indices.iter().enumerate() {
            if i >= dim {
                return Err(EkiError::InvalidInput(format!(
                    "box component index {i} out of range for dimension {dim}"
                )));
            }
            let mut a_lo = DVector::zeros(dim);
            a_lo[i] = -1.0;
            cs.push(ConvexConstraint::Affine {
                a: a_lo,
                b: bounds.lower[k],
            });
            let mut a_hi = DVector::zeros(dim);
            a_hi[i] = 1.0;
            cs.push(ConvexConstraint::Affine {
                a: a_hi,
                b: -bounds.upper[k],
            });
        }
        Ok(ConstraintSet::new(dim, cs))
    }

    /// Single constraint `0.5 <u, C^{-1} u> <= radius`.
    pub fn make_norm_ball(cov: Arc<Spd>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(EkiError::InvalidInput(format!(
                "norm ball radius must be positive, got {radius}"
            )));
        }
        let dim = cov.dim();
        Ok(ConstraintSet::new(
            dim,
            vec![ConvexConstraint::NormBall { cov, radius }],
        ))
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constraints(&self) -> &[ConvexConstraint] {
        &self.constraints
    }

    pub fn values(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|c| c.value(u)),
        )
    }

    /// `max_i h_i(u)`; `-inf` for an empty set. Negative iff `u` is strictly
    /// feasible.
    pub fn feasibility_margin(&self, u: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.value(u))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Strict interior test with the numerical margin `eps_feas`.
    pub fn strictly_feasible(&self, u: &DVector<f64>) -> bool {
        self.constraints.iter().all(|c| {
            let h = c.value(u);
            h < -eps_feas(h)
        })
    }

    /// `-(1/tau) sum_i log(-h_i(u))`; `+inf` when any `h_i(u) >= 0`.
    pub fn barrier_value(&self, u: &DVector<f64>, tau: f64) -> f64 {
        let mut sum = 0.0;
        for c in &self.constraints {
            let h = c.value(u);
            if h >= 0.0 {
                return f64::INFINITY;
            }
            sum += (-h).ln();
        }
        -sum / tau
    }

    /// `(1/tau) sum_i grad h_i(u) / h_i(u)`, defined only strictly inside the
    /// feasible set. Within `eps_feas` of the boundary the drift refuses to
    /// evaluate so that callers reject the step instead of integrating an
    /// exploding term.
    pub fn barrier_drift(&self, u: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
        if !(tau > 0.0) {
            return Err(EkiError::InvalidInput(format!(
                "barrier requires tau > 0, got {tau}"
            )));
        }
        let mut drift = DVector::zeros(u.nrows());
        for (i, c) in self.constraints.iter().enumerate() {
            let h = c.value(u);
            if h >= -eps_feas(h) {
                return Err(EkiError::FeasibilityMargin { index: i, value: h });
            }
            drift += c.grad(u) * (1.0 / h);
        }
        Ok(drift / tau)
    }
}

/// Stack the constraint gradients as rows (`m x d`). Used by KKT residuals.
pub fn gradient_rows(cs: &ConstraintSet, u: &DVector<f64>) -> DMatrix<f64> {
    let m = cs.len();
    let d = u.nrows();
    let mut rows = DMatrix::zeros(m, d);
    for (i, c) in cs.constraints().iter().enumerate() {
        rows.set_row(i, &c.grad(u).transpose());
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_box_1d() -> ConstraintSet {
        let b = BoxBounds::uniform(1, -1.0, 1.0).unwrap();
        ConstraintSet::make_box(1, &b).unwrap()
    }

    #[test]
    fn barrier_value_on_unit_box() {
        // h = (-1 - u, u - 1) at u = 0.5 gives (-1.5, -0.5);
        // value = -(1/2)(ln 1.5 + ln 0.5) = -(1/2) ln 0.75.
        let cs = unit_box_1d();
        let u = DVector::from_vec(vec![0.5]);
        let expected = -0.5 * (1.5f64.ln() + 0.5f64.ln());
        assert!((expected - 0.143_841_036_225_890_4).abs() < 1e-15);
        assert!((cs.barrier_value(&u, 2.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn barrier_value_infinite_outside_and_on_boundary() {
        let cs = unit_box_1d();
        assert!(cs
            .barrier_value(&DVector::from_vec(vec![1.2]), 1.0)
            .is_infinite());
        assert!(cs
            .barrier_value(&DVector::from_vec(vec![1.0]), 1.0)
            .is_infinite());
    }

    #[test]
    fn barrier_drift_on_unit_box() {
        // (1/h1) grad h1 + (1/h2) grad h2 = (1/-1.5)(-1) + (1/-0.5)(1) = -4/3.
        let cs = unit_box_1d();
        let u = DVector::from_vec(vec![0.5]);
        let drift = cs.barrier_drift(&u, 1.0).unwrap();
        assert!((drift[0] + 4.0 / 3.0).abs() < 1e-14);
        // tau scales the drift linearly.
        let drift4 = cs.barrier_drift(&u, 4.0).unwrap();
        assert!((drift4[0] + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn barrier_drift_is_negative_gradient_of_barrier_value() {
        // Central differences on the barrier value, steps scaled per
        // component.
        let b = BoxBounds::uniform(3, -2.0, 1.5).unwrap();
        let cs = ConstraintSet::make_box(3, &b).unwrap();
        let u = DVector::from_vec(vec![0.3, -1.1, 0.9]);
        let tau = 3.0;
        let drift = cs.barrier_drift(&u, tau).unwrap();
        for i in 0..3 {
            let h = 1e-6 * (1.0 + u[i].abs());
            let mut up = u.clone();
            up[i] += h;
            let mut dn = u.clone();
            dn[i] -= h;
            let fd = (cs.barrier_value(&up, tau) - cs.barrier_value(&dn, tau)) / (2.0 * h);
            assert!(
                (drift[i] + fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "component {i}: drift {} vs -fd {}",
                drift[i],
                -fd
            );
        }
    }

    #[test]
    fn drift_refuses_near_boundary() {
        let cs = unit_box_1d();
        let u = DVector::from_vec(vec![1.0 - 1e-12]);
        match cs.barrier_drift(&u, 1.0) {
            Err(EkiError::FeasibilityMargin { index: 1, .. }) => {}
            other => panic!("expected feasibility-margin error, got {other:?}"),
        }
        // Clearly interior points evaluate fine.
        assert!(cs
            .barrier_drift(&DVector::from_vec(vec![0.99]), 1.0)
            .is_ok());
    }

    #[test]
    fn feasibility_margin_reports_worst_constraint() {
        let cs = unit_box_1d();
        let m = cs.feasibility_margin(&DVector::from_vec(vec![1.2]));
        assert!((m - 0.2).abs() < 1e-14);
        assert!(cs.feasibility_margin(&DVector::from_vec(vec![0.0])) < 0.0);
    }

    #[test]
    fn empty_set_sentinels() {
        let cs = ConstraintSet::empty(2);
        let u = DVector::from_vec(vec![5.0, -7.0]);
        assert_eq!(cs.feasibility_margin(&u), f64::NEG_INFINITY);
        assert_eq!(cs.barrier_value(&u, 1.0), 0.0);
        assert_eq!(cs.barrier_drift(&u, 1.0).unwrap().norm(), 0.0);
        assert!(cs.strictly_feasible(&u));
    }

    #[test]
    fn norm_ball_value_and_gradient() {
        let c0 = Arc::new(
            Spd::new(DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0])).unwrap(),
        );
        let cs = ConstraintSet::make_norm_ball(c0, 1.0).unwrap();
        let u = DVector::from_vec(vec![2.0, 0.0]);
        // h = 0.5 * (2 * 1/4 * 2) - 1 = -0.5, grad = C^{-1} u = (0.5, 0).
        assert!((cs.values(&u)[0] + 0.5).abs() < 1e-14);
        let g = cs.constraints()[0].grad(&u);
        assert!((g[0] - 0.5).abs() < 1e-14);
        assert!(g[1].abs() < 1e-14);
        assert!(ConstraintSet::make_norm_ball(
            Arc::new(Spd::scaled_identity(2, 1.0).unwrap()),
            0.0
        )
        .is_err());
    }

    #[test]
    fn invalid_box_bounds_rejected() {
        assert!(matches!(
            BoxBounds::uniform(2, 1.0, 1.0),
            Err(EkiError::InvalidBounds { .. })
        ));
        assert!(matches!(
            BoxBounds::uniform(2, 2.0, -2.0),
            Err(EkiError::InvalidBounds { .. })
        ));
    }

    #[test]
    fn partial_box_leaves_other_components_alone() {
        let b = BoxBounds::on_components(
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![1.0]),
            vec![1],
        )
        .unwrap();
        let u = DVector::from_vec(vec![9.0, 3.0, -9.0]);
        let p = project_box(&b, &u);
        assert_eq!(p[0], 9.0);
        assert_eq!(p[1], 1.0);
        assert_eq!(p[2], -9.0);
        let cs = ConstraintSet::make_box(3, &b).unwrap();
        assert_eq!(cs.len(), 2);
        assert!((cs.feasibility_margin(&u) - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn box_projection_is_idempotent_and_feasible(
            x in prop::collection::vec(-10.0..10.0f64, 4),
        ) {
            let b = BoxBounds::uniform(4, -1.25, 2.5).unwrap();
            let cs = ConstraintSet::make_box(4, &b).unwrap();
            let u = DVector::from_vec(x);
            let p = project_box(&b, &u);
            prop_assert!(cs.feasibility_margin(&p) <= 0.0);
            let pp = project_box(&b, &p);
            prop_assert_eq!(p, pp);
        }

        #[test]
        fn box_projection_is_non_expansive(
            x in prop::collection::vec(-10.0..10.0f64, 3),
            y in prop::collection::vec(-10.0..10.0f64, 3),
        ) {
            let b = BoxBounds::uniform(3, -2.0, 2.0).unwrap();
            let u = DVector::from_vec(x);
            let v = DVector::from_vec(y);
            let du = (project_box(&b, &u) - project_box(&b, &v)).norm();
            prop_assert!(du <= (u - v).norm() + 1e-12);
        }
    }
}
