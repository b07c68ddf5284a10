//! Right-hand sides of the interacting-particle flows.
//!
//! Every variant is driven by the preconditioned data-misfit term
//! `-Chat^{uG} Gamma^{-1} (G(u_j) - y)`; the Tikhonov variants add
//! `-lambda Chat C0^{-1} u_j`, covariance inflation counteracts collapse with
//! the centered copies of those two terms, and the barrier variants append
//! `Chat * barrier_drift` evaluated either at the ensemble mean or per
//! particle. All of the drift directions are images of `Chat` or `Chat^{uG}`,
//! so the flow never leaves the affine span of the initial ensemble.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;
use crate::ensemble::{compute_stats, Ensemble, EnsembleStats};
use crate::error::{EkiError, Result};
use crate::potentials::ForwardModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Misfit drift only (plus inflation if scheduled): no regularization and
    /// no constraint handling.
    PlainEki,
    /// Misfit plus Tikhonov drift.
    TikhonovEki,
    /// Tikhonov flow with the log-barrier drift evaluated at the ensemble
    /// mean and applied identically to every particle.
    BarrierMean,
    /// Same, but the barrier drift is evaluated at each particle.
    BarrierPerParticle,
}

impl Variant {
    pub fn is_barrier(self) -> bool {
        matches!(self, Variant::BarrierMean | Variant::BarrierPerParticle)
    }

    /// Whether the Tikhonov term participates in the drift.
    pub fn regularized(self) -> bool {
        !matches!(self, Variant::PlainEki)
    }
}

/// Time-dependent inflation strength `rho_t` in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InflationSchedule {
    Off,
    Constant { rho0: f64 },
    /// `rho_t = 1 - 1/ln(t + e)`: zero at `t = 0`, approaching one slowly.
    LogIncreasing,
}

impl InflationSchedule {
    pub fn validate(&self) -> Result<()> {
        if let InflationSchedule::Constant { rho0 } = self {
            if !(0.0..1.0).contains(rho0) {
                return Err(EkiError::InvalidInput(format!(
                    "constant inflation needs rho0 in [0, 1), got {rho0}"
                )));
            }
        }
        Ok(())
    }

    pub fn rho(&self, t: f64) -> f64 {
        match self {
            InflationSchedule::Off => 0.0,
            InflationSchedule::Constant { rho0 } => *rho0,
            InflationSchedule::LogIncreasing => {
                let r = 1.0 - 1.0 / (t + std::f64::consts::E).ln();
                r.clamp(0.0, 1.0 - 1e-12)
            }
        }
    }
}

/// Barrier penalty strength `tau_t > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PenaltySchedule {
    Constant { tau0: f64 },
    /// `tau_t = t + 1`.
    Linear,
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if let PenaltySchedule::Constant { tau0 } = self {
            if !(*tau0 > 0.0) {
                return Err(EkiError::InvalidInput(format!(
                    "constant penalty needs tau0 > 0, got {tau0}"
                )));
            }
        }
        Ok(())
    }

    pub fn tau(&self, t: f64) -> f64 {
        match self {
            PenaltySchedule::Constant { tau0 } => *tau0,
            PenaltySchedule::Linear => t + 1.0,
        }
    }
}

/// A fully specified particle flow: variant, model, regularization strength,
/// schedules, and (for the barrier variants) the constraint set.
#[derive(Clone)]
pub struct FlowSpec {
    pub variant: Variant,
    pub model: Arc<dyn ForwardModel>,
    pub lambda: f64,
    pub inflation: InflationSchedule,
    /// Constant strength of the inflation term paired with the Tikhonov
    /// drift, in `[0, 1)`. Ignored by the plain variant.
    pub beta: f64,
    pub penalty: PenaltySchedule,
    pub constraints: Option<ConstraintSet>,
}

impl FlowSpec {
    pub fn new(
        variant: Variant,
        model: Arc<dyn ForwardModel>,
        lambda: f64,
        inflation: InflationSchedule,
        beta: f64,
        penalty: PenaltySchedule,
        constraints: Option<ConstraintSet>,
    ) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(EkiError::InvalidInput(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(EkiError::InvalidInput(format!(
                "beta must be in [0, 1), got {beta}"
            )));
        }
        inflation.validate()?;
        penalty.validate()?;
        if variant.is_barrier() {
            match &constraints {
                None => {
                    return Err(EkiError::InvalidInput(
                        "barrier variants need a constraint set".into(),
                    ))
                }
                Some(cs) => {
                    if cs.dim() != model.dim_u() {
                        return Err(EkiError::DimensionMismatch {
                            what: "FlowSpec (constraint dimension)",
                            expected: model.dim_u(),
                            actual: cs.dim(),
                        });
                    }
                }
            }
        }
        Ok(FlowSpec {
            variant,
            model,
            lambda,
            inflation,
            beta,
            penalty,
            constraints,
        })
    }

    /// `(rho_t, beta_t, tau_t)` as seen by the drift at time `t`.
    pub fn eval_schedules(&self, t: f64) -> (f64, f64, f64) {
        let rho = self.inflation.rho(t);
        let beta = if self.variant.regularized() {
            self.beta
        } else {
            0.0
        };
        (rho, beta, self.penalty.tau(t))
    }

    /// Forward images of all particles, one column per particle.
    pub fn forward_all(&self, ens: &Ensemble) -> DMatrix<f64> {
        let j = ens.size();
        let mut g = DMatrix::zeros(self.model.dim_obs(), j);
        for c in 0..j {
            let gc = self.model.apply(&DVector::from(ens.particles().column(c)));
            g.set_column(c, &gc);
        }
        g
    }

    pub fn stats(&self, ens: &Ensemble) -> Result<EnsembleStats> {
        compute_stats(ens, &self.forward_all(ens))
    }

    /// Full drift, one column per particle.
    pub fn rhs(&self, t: f64, ens: &Ensemble) -> Result<DMatrix<f64>> {
        let stats = self.stats(ens)?;
        self.rhs_with(t, ens, &stats)
    }

    /// Full drift given precomputed statistics (whose forward images must
    /// belong to `ens`).
    pub fn rhs_with(&self, t: f64, ens: &Ensemble, stats: &EnsembleStats) -> Result<DMatrix<f64>> {
        let (rho, beta, tau) = self.eval_schedules(t);
        let gamma = self.model.noise_cov();
        let j = ens.size();

        // -Chat^{uG} Gamma^{-1} (G_j - y)
        let mut resid = stats.g_centered.clone();
        let dbar = &stats.mean_g - self.model.data();
        for c in 0..j {
            let mut col = resid.column_mut(c);
            col += &dbar;
        }
        let mut drift = -(&stats.cross_cov * gamma.solve_mat(&resid));

        // + rho Chat^{uG} Gamma^{-1} (G_j - Gbar)
        if rho != 0.0 {
            drift += rho * (&stats.cross_cov * gamma.solve_mat(&stats.g_centered));
        }

        if self.variant.regularized() && self.lambda > 0.0 {
            let c0 = self.model.prior_cov();
            // -lambda Chat C0^{-1} u_j
            drift -= self.lambda * (&stats.cov * c0.solve_mat(ens.particles()));
            // + beta lambda Chat C0^{-1} (u_j - ubar)
            if beta != 0.0 {
                drift += beta * self.lambda * (&stats.cov * c0.solve_mat(&stats.centered));
            }
        }

        match self.variant {
            Variant::BarrierMean => {
                let cs = self.constraints.as_ref().expect("validated at build");
                let b = &stats.cov * cs.barrier_drift(&stats.mean, tau)?;
                for c in 0..j {
                    let mut col = drift.column_mut(c);
                    col += &b;
                }
            }
            Variant::BarrierPerParticle => {
                let cs = self.constraints.as_ref().expect("validated at build");
                for c in 0..j {
                    let u = DVector::from(ens.particles().column(c));
                    let b = &stats.cov * cs.barrier_drift(&u, tau)?;
                    let mut col = drift.column_mut(c);
                    col += &b;
                }
            }
            Variant::PlainEki | Variant::TikhonovEki => {}
        }

        Ok(drift)
    }

    /// Drift of the centered particles `e_j = u_j - ubar`, in closed form:
    /// `-(1 - rho_t) Chat^{uG} Gamma^{-1} (G_j - Gbar)
    ///  - (1 - beta_t) lambda Chat C0^{-1} e_j`.
    ///
    /// For the mean-placement variants this equals `rhs - mean(rhs)` exactly;
    /// it never sees the data, the barrier, or the penalty schedule.
    pub fn rhs_centered(&self, t: f64, ens: &Ensemble) -> Result<DMatrix<f64>> {
        let stats = self.stats(ens)?;
        self.rhs_centered_with(t, &stats)
    }

    pub fn rhs_centered_with(&self, t: f64, stats: &EnsembleStats) -> Result<DMatrix<f64>> {
        let (rho, beta, _) = self.eval_schedules(t);
        let gamma = self.model.noise_cov();
        let mut drift = -(1.0 - rho) * (&stats.cross_cov * gamma.solve_mat(&stats.g_centered));
        if self.variant.regularized() && self.lambda > 0.0 {
            let c0 = self.model.prior_cov();
            drift -=
                (1.0 - beta) * self.lambda * (&stats.cov * c0.solve_mat(&stats.centered));
        }
        Ok(drift)
    }

    /// Closed-form time derivative of the ensemble spread
    /// `V_e = (1/J) sum_j ||e_j||^2 / 2` under the centered dynamics:
    /// `-(1 - rho_t) tr(Chat^{uG} Gamma^{-1} (Chat^{uG})^T)
    ///  - (1 - beta_t) lambda tr(Chat C0^{-1} Chat)`.
    ///
    /// Both traces are Frobenius norms of whitened covariances, so the rate
    /// is never positive: the spread is dissipated monotonically.
    pub fn spread_dissipation_rate(&self, t: f64, stats: &EnsembleStats) -> f64 {
        let (rho, beta, _) = self.eval_schedules(t);
        let gamma = self.model.noise_cov();
        let cross_t = stats.cross_cov.transpose();
        let mut rate = -(1.0 - rho) * gamma.quad_mat(&cross_t);
        if self.variant.regularized() && self.lambda > 0.0 {
            rate -= (1.0 - beta) * self.lambda * self.model.prior_cov().quad_mat(&stats.cov);
        }
        rate
    }
}

/// Bare preconditioned misfit drift `-Chat^{uG} Gamma^{-1} (G(u_j) - y)`,
/// with no inflation, regularization, or constraint handling.
pub fn rhs_plain_eki(
    stats: &EnsembleStats,
    model: &dyn ForwardModel,
) -> Result<DMatrix<f64>> {
    let j = stats.centered.ncols();
    if model.data().nrows() != stats.mean_g.nrows() {
        return Err(EkiError::DimensionMismatch {
            what: "rhs_plain_eki (data length)",
            expected: stats.mean_g.nrows(),
            actual: model.data().nrows(),
        });
    }
    let mut resid = stats.g_centered.clone();
    let dbar = &stats.mean_g - model.data();
    for c in 0..j {
        let mut col = resid.column_mut(c);
        col += &dbar;
    }
    Ok(-(&stats.cross_cov * model.noise_cov().solve_mat(&resid)))
}

/// Norm of the gap between the ensemble drift evaluated at the mean and the
/// covariance-preconditioned misfit gradient flow:
/// `|| Chat^{uG} Gamma^{-1} (Gbar - y) - Chat DG(ubar)^T Gamma^{-1} (G(ubar) - y) ||`.
///
/// Zero for linear forward maps; for differentiable nonlinear maps it decays
/// with the ensemble spread.
pub fn gradient_flow_discrepancy(
    stats: &EnsembleStats,
    model: &dyn ForwardModel,
) -> Result<f64> {
    let dbar = &stats.mean_g - model.data();
    let ens_term = &stats.cross_cov * model.noise_cov().solve(&dbar);
    let g_mean = model.apply(&stats.mean);
    let r = model.noise_cov().solve(&(g_mean - model.data()));
    let grad = model
        .vjp(&stats.mean, &r)
        .ok_or(EkiError::JacobianUnavailable)?;
    Ok((ens_term - &stats.cov * grad).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConvexConstraint;
    use crate::forward_models::linear::LinearModel;
    use crate::forward_models::pseudo::PseudoLinearModel;
    use crate::linalg::Spd;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_model(d: usize) -> Arc<LinearModel> {
        Arc::new(
            LinearModel::new(
                DMatrix::identity(d, d),
                DVector::zeros(d),
                Spd::scaled_identity(d, 1.0).unwrap(),
                Spd::scaled_identity(d, 1.0).unwrap(),
            )
            .unwrap(),
        )
    }

    fn random_setup(seed: u64, d: usize, j: usize) -> (Arc<PseudoLinearModel>, Ensemble) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let mut c0m = DMatrix::<f64>::identity(d, d);
        for i in 0..d {
            c0m[(i, i)] = 1.0 + i as f64 * 0.3;
        }
        let model = Arc::new(PseudoLinearModel::new(
            a,
            0.15,
            y,
            Spd::scaled_identity(d, 0.5).unwrap(),
            Spd::new(c0m).unwrap(),
        ));
        let p = DMatrix::from_fn(d, j, |_, _| rng.gen_range(-1.0..1.0));
        (model, Ensemble::new(p).unwrap())
    }

    #[test]
    fn plain_drift_on_two_point_identity_example() {
        // G = id, y = 0, Gamma = 1, particles {-1, +1}: Chat^{uG} = 1 and the
        // drift pulls each particle toward the origin with unit speed.
        let model = identity_model(1);
        let ens = Ensemble::new(DMatrix::from_row_slice(1, 2, &[-1.0, 1.0])).unwrap();
        let stats = compute_stats(&ens, &ens.particles().clone()).unwrap();
        let drift = rhs_plain_eki(&stats, model.as_ref()).unwrap();
        assert!((drift[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((drift[(0, 1)] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn barrier_mean_drift_hand_example() {
        // Same two-point setup, constraint u <= 2 (h = u - 2), tau = 1,
        // lambda = 0. At the mean 0: barrier drift = 1/h = -1/2, Chat = 1,
        // so each particle feels -0.5 on top of the misfit pull:
        // (+1, -1) + (-0.5, -0.5) = (0.5, -1.5).
        let cs = ConstraintSet::new(
            1,
            vec![ConvexConstraint::Affine {
                a: DVector::from_vec(vec![1.0]),
                b: -2.0,
            }],
        );
        let flow = FlowSpec::new(
            Variant::BarrierMean,
            identity_model(1),
            0.0,
            InflationSchedule::Off,
            0.0,
            PenaltySchedule::Constant { tau0: 1.0 },
            Some(cs),
        )
        .unwrap();
        let ens = Ensemble::new(DMatrix::from_row_slice(1, 2, &[-1.0, 1.0])).unwrap();
        let drift = flow.rhs(0.0, &ens).unwrap();
        assert!((drift[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((drift[(0, 1)] + 1.5).abs() < 1e-14);
    }

    #[test]
    fn centered_rhs_equals_centered_full_rhs() {
        let (model, ens) = random_setup(5, 4, 6);
        let d = model.dim_u();
        for variant in [Variant::PlainEki, Variant::TikhonovEki, Variant::BarrierMean] {
            let constraints = variant.is_barrier().then(|| {
                ConstraintSet::new(
                    d,
                    vec![ConvexConstraint::Affine {
                        a: DVector::from_element(d, 1.0),
                        b: -100.0,
                    }],
                )
            });
            let flow = FlowSpec::new(
                variant,
                model.clone(),
                0.7,
                InflationSchedule::Constant { rho0: 0.3 },
                0.1,
                PenaltySchedule::Constant { tau0: 2.0 },
                constraints,
            )
            .unwrap();
            let full = flow.rhs(1.5, &ens).unwrap();
            let centered = flow.rhs_centered(1.5, &ens).unwrap();
            let j = ens.size();
            let mean_drift = full.column_sum() / j as f64;
            for c in 0..j {
                let diff = DVector::from(full.column(c)) - &mean_drift
                    - DVector::from(centered.column(c));
                assert!(diff.norm() < 1e-12, "{variant:?} column {c}: {}", diff.norm());
            }
        }
    }

    #[test]
    fn inflation_leaves_the_mean_drift_unchanged() {
        let (model, ens) = random_setup(11, 3, 5);
        let base = FlowSpec::new(
            Variant::TikhonovEki,
            model.clone(),
            0.4,
            InflationSchedule::Off,
            0.0,
            PenaltySchedule::Constant { tau0: 1.0 },
            None,
        )
        .unwrap();
        let inflated = FlowSpec::new(
            Variant::TikhonovEki,
            model,
            0.4,
            InflationSchedule::Constant { rho0: 0.8 },
            0.6,
            PenaltySchedule::Constant { tau0: 1.0 },
            None,
        )
        .unwrap();
        let m0 = base.rhs(0.0, &ens).unwrap().column_sum();
        let m1 = inflated.rhs(0.0, &ens).unwrap().column_sum();
        assert!((m0 - m1).norm() < 1e-12);
    }

    #[test]
    fn spread_dissipation_matches_centered_inner_product_and_is_nonpositive() {
        let (model, ens) = random_setup(17, 4, 7);
        for (rho0, beta) in [(0.0, 0.0), (0.35, 0.0), (0.6, 0.25)] {
            let flow = FlowSpec::new(
                Variant::TikhonovEki,
                model.clone(),
                0.9,
                InflationSchedule::Constant { rho0 },
                beta,
                PenaltySchedule::Constant { tau0: 1.0 },
                None,
            )
            .unwrap();
            let stats = flow.stats(&ens).unwrap();
            let centered_rhs = flow.rhs_centered_with(0.0, &stats).unwrap();
            // chain rule on V_e = (1/J) sum ||e_j||^2 / 2
            let j = ens.size() as f64;
            let mut inner = 0.0;
            for c in 0..ens.size() {
                inner += stats.centered.column(c).dot(&centered_rhs.column(c)) / j;
            }
            let rate = flow.spread_dissipation_rate(0.0, &stats);
            assert!(
                (rate - inner).abs() < 1e-10 * (1.0 + rate.abs()),
                "rate {rate} vs inner product {inner}"
            );
            assert!(rate <= 0.0);
        }
    }

    #[test]
    fn drift_stays_in_the_ensemble_span() {
        let (model, ens) = random_setup(23, 6, 3);
        let sub = crate::ensemble::AffineSubspace::from_ensemble(&ens).unwrap();
        let cs = ConstraintSet::new(
            6,
            vec![ConvexConstraint::Affine {
                a: DVector::from_element(6, 0.1),
                b: -50.0,
            }],
        );
        let flow = FlowSpec::new(
            Variant::BarrierPerParticle,
            model,
            0.5,
            InflationSchedule::LogIncreasing,
            0.2,
            PenaltySchedule::Linear,
            Some(cs),
        )
        .unwrap();
        let drift = flow.rhs(2.0, &ens).unwrap();
        for c in 0..ens.size() {
            let v = DVector::from(drift.column(c));
            let proj = &sub.basis * (sub.basis.transpose() * &v);
            assert!((v - proj).norm() < 1e-10);
        }
    }

    #[test]
    fn centered_rhs_ignores_the_penalty_schedule() {
        let (model, ens) = random_setup(31, 3, 4);
        let cs = || {
            ConstraintSet::new(
                3,
                vec![ConvexConstraint::Affine {
                    a: DVector::from_element(3, 1.0),
                    b: -40.0,
                }],
            )
        };
        let mk = |tau0| {
            FlowSpec::new(
                Variant::BarrierMean,
                model.clone(),
                0.3,
                InflationSchedule::Constant { rho0: 0.2 },
                0.0,
                PenaltySchedule::Constant { tau0 },
                Some(cs()),
            )
            .unwrap()
        };
        let a = mk(0.5).rhs_centered(1.0, &ens).unwrap();
        let b = mk(500.0).rhs_centered(1.0, &ens).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plain_variant_ignores_lambda() {
        let (model, ens) = random_setup(41, 3, 5);
        let mk = |lambda| {
            FlowSpec::new(
                Variant::PlainEki,
                model.clone(),
                lambda,
                InflationSchedule::Constant { rho0: 0.4 },
                0.0,
                PenaltySchedule::Constant { tau0: 1.0 },
                None,
            )
            .unwrap()
        };
        let a = mk(0.0).rhs(0.7, &ens).unwrap();
        let b = mk(5.0).rhs(0.7, &ens).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn schedules_evaluate_as_documented() {
        let log = InflationSchedule::LogIncreasing;
        assert!(log.rho(0.0).abs() < 1e-15);
        // ln(t + e) = 2 at t = e^2 - e, so rho = 1/2 there.
        let t_half = std::f64::consts::E * (std::f64::consts::E - 1.0);
        assert!((log.rho(t_half) - 0.5).abs() < 1e-12);
        let mut prev = -1.0;
        for k in 0..60 {
            let r = log.rho(10f64.powi(k - 2));
            assert!(r >= prev && r < 1.0);
            prev = r;
        }
        assert!(log.rho(1e300) <= 1.0 - 1e-12);

        assert_eq!(PenaltySchedule::Linear.tau(3.0), 4.0);
        assert_eq!(PenaltySchedule::Constant { tau0: 2.5 }.tau(1e6), 2.5);
        assert!(InflationSchedule::Constant { rho0: 1.0 }.validate().is_err());
        assert!(PenaltySchedule::Constant { tau0: 0.0 }.validate().is_err());
    }

    #[test]
    fn gradient_flow_discrepancy_vanishes_for_linear_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 4;
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let model = LinearModel::new(
            a,
            y,
            Spd::scaled_identity(d, 0.3).unwrap(),
            Spd::scaled_identity(d, 1.0).unwrap(),
        )
        .unwrap();
        let p = DMatrix::from_fn(d, 6, |_, _| rng.gen_range(-1.0..1.0));
        let ens = Ensemble::new(p).unwrap();
        let mut g = DMatrix::zeros(d, 6);
        for c in 0..6 {
            g.set_column(c, &model.apply(&DVector::from(ens.particles().column(c))));
        }
        let stats = compute_stats(&ens, &g).unwrap();
        let err = gradient_flow_discrepancy(&stats, &model).unwrap();
        assert!(err < 1e-13, "linear discrepancy {err}");
    }

    #[test]
    fn gradient_flow_discrepancy_shrinks_with_spread() {
        // Pseudolinear map: the mismatch between the ensemble cross-
        // covariance and the linearized gradient is quadratic in the spread.
        let (model, _) = random_setup(53, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let center = DVector::from_fn(3, |_, _| rng.gen_range(-0.5..0.5));
        let mut errs = Vec::new();
        for scale in [1e-2, 1e-3] {
            let p = DMatrix::from_fn(3, 6, |r, _| center[r] + rng.gen_range(-scale..scale));
            let ens = Ensemble::new(p).unwrap();
            let mut g = DMatrix::zeros(3, 6);
            for c in 0..6 {
                g.set_column(c, &model.apply(&DVector::from(ens.particles().column(c))));
            }
            let stats = compute_stats(&ens, &g).unwrap();
            errs.push(gradient_flow_discrepancy(&stats, model.as_ref()).unwrap());
        }
        assert!(errs[1] < errs[0] * 1e-2, "errors {errs:?}");
    }

    #[test]
    fn barrier_variant_requires_constraints() {
        let model = identity_model(2);
        assert!(matches!(
            FlowSpec::new(
                Variant::BarrierMean,
                model,
                0.1,
                InflationSchedule::Off,
                0.0,
                PenaltySchedule::Linear,
                None,
            ),
            Err(EkiError::InvalidInput(_))
        ));
    }
}
