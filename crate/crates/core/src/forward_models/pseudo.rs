//! Pseudolinear forward map `G(u) = A u + eps sin(u)` (componentwise sine).
//!
//! The bounded nonlinearity keeps the map globally Lipschitz while making the
//! inverse problem genuinely nonlinear; `eps = 0` recovers the linear map
//! exactly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::linalg::Spd;
use crate::potentials::ForwardModel;

pub struct PseudoLinearModel {
    a: DMatrix<f64>,
    eps: f64,
    data: DVector<f64>,
    gamma: Arc<Spd>,
    c0: Arc<Spd>,
}

impl PseudoLinearModel {
    pub fn new(a: DMatrix<f64>, eps: f64, data: DVector<f64>, gamma: Spd, c0: Spd) -> Self {
        Self::from_arcs(a, eps, data, Arc::new(gamma), Arc::new(c0))
    }

    pub fn from_arcs(
        a: DMatrix<f64>,
        eps: f64,
        data: DVector<f64>,
        gamma: Arc<Spd>,
        c0: Arc<Spd>,
    ) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "pseudolinear map needs square A");
        assert_eq!(data.nrows(), a.nrows());
        PseudoLinearModel {
            a,
            eps,
            data,
            gamma,
            c0,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn prior_cov_arc(&self) -> Arc<Spd> {
        Arc::clone(&self.c0)
    }

    /// Spectral norm bound on `DG`: `|A|_2 + eps`. Every Jacobian satisfies
    /// it since `|diag(cos)|_2 <= 1`.
    pub fn lipschitz_bound(&self) -> f64 {
        let svd = nalgebra::SVD::new(self.a.clone(), false, false);
        svd.singular_values.max() + self.eps.abs()
    }
}

impl ForwardModel for PseudoLinearModel {
    fn dim_u(&self) -> usize {
        self.a.ncols()
    }

    fn dim_obs(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.a * u + u.map(f64::sin) * self.eps
    }

    /// `A + eps diag(cos u)`.
    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut j = self.a.clone();
        for i in 0..u.nrows() {
            j[(i, i)] += self.eps * u[i].cos();
        }
        Some(j)
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 4;
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let m = PseudoLinearModel::new(
            a,
            0.25,
            DVector::zeros(d),
            Spd::scaled_identity(d, 1.0).unwrap(),
            Spd::scaled_identity(d, 1.0).unwrap(),
        );
        let u = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let j = m.jacobian(&u).unwrap();
        for i in 0..d {
            let h = 1e-6 * (1.0 + u[i].abs());
            let mut up = u.clone();
            up[i] += h;
            let mut dn = u.clone();
            dn[i] -= h;
            let col = (m.apply(&up) - m.apply(&dn)) / (2.0 * h);
            for r in 0..d {
                assert!((j[(r, i)] - col[r]).abs() < 1e-6 * (1.0 + col[r].abs()));
            }
        }
    }

    #[test]
    fn eps_zero_is_exactly_linear() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let m = PseudoLinearModel::new(
            a.clone(),
            0.0,
            DVector::zeros(2),
            Spd::scaled_identity(2, 1.0).unwrap(),
            Spd::scaled_identity(2, 1.0).unwrap(),
        );
        let u = DVector::from_vec(vec![3.0, -4.0]);
        assert_eq!(m.apply(&u), &a * &u);
        assert_eq!(m.jacobian(&u).unwrap(), a);
    }

    #[test]
    fn lipschitz_bound_dominates_sampled_jacobians() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let m = PseudoLinearModel::new(
            a,
            0.4,
            DVector::zeros(3),
            Spd::scaled_identity(3, 1.0).unwrap(),
            Spd::scaled_identity(3, 1.0).unwrap(),
        );
        let bound = m.lipschitz_bound();
        for _ in 0..20 {
            let u = DVector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0));
            let j = m.jacobian(&u).unwrap();
            let norm = nalgebra::SVD::new(j, false, false).singular_values.max();
            assert!(norm <= bound + 1e-12);
        }
    }
}
