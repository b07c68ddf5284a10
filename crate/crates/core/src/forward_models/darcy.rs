//! Steady Darcy flow on the unit square: `-div(exp(u) grad p) = f` with
//! homogeneous Dirichlet pressure, discretized by P1 finite elements on the
//! uniform right-triangle mesh of an `n x n` nodal grid.
//!
//! The parameter is the full nodal log-conductivity field (`d = n^2`,
//! boundary nodes included); observations are pointwise pressures at seeded
//! random locations, read off by P1 interpolation. The Jacobian is assembled
//! from adjoint solves against the cached stiffness factorization, one per
//! observation; the vector-Jacobian product needs a single adjoint solve.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{EkiError, Result};
use crate::linalg::Spd;
use crate::potentials::ForwardModel;

pub struct DarcyOperator {
    n: usize,
    source: f64,
    /// node ids per triangle, counter-clockwise
    triangles: Vec<[usize; 3]>,
    /// per-triangle geometric stiffness (coefficient-independent part)
    geo: Vec<[[f64; 3]; 3]>,
    tri_area: f64,
    /// node id -> interior index, usize::MAX on the boundary
    interior_of: Vec<usize>,
    interior_ids: Vec<usize>,
    obs_points: Vec<(f64, f64)>,
    /// `k_obs x n^2` interpolation weights
    obs_mat: DMatrix<f64>,
}

impl DarcyOperator {
    /// Mesh the unit square with `n` nodes per side and draw `k_obs`
    /// observation points uniformly in `(0.1, 0.9)^2` from `obs_seed`.
    pub fn new(n: usize, source: f64, k_obs: usize, obs_seed: u64) -> Result<Self> {
        if n < 3 {
            return Err(EkiError::InvalidInput(format!(
                "darcy mesh needs n >= 3 nodes per side, got {n}"
            )));
        }
        if k_obs == 0 {
            return Err(EkiError::InvalidInput("need at least one observation".into()));
        }
        let h = 1.0 / (n - 1) as f64;
        let node = |ix: usize, iy: usize| iy * n + ix;

        let mut triangles = Vec::with_capacity(2 * (n - 1) * (n - 1));
        for iy in 0..n - 1 {
            for ix in 0..n - 1 {
                let a = node(ix, iy);
                let b = node(ix + 1, iy);
                let c = node(ix, iy + 1);
                let d = node(ix + 1, iy + 1);
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }

        let coord = |id: usize| {
            let ix = id % n;
            let iy = id / n;
            (ix as f64 * h, iy as f64 * h)
        };
        let tri_area = 0.5 * h * h;
        let mut geo = Vec::with_capacity(triangles.len());
        for t in &triangles {
            let (x1, y1) = coord(t[0]);
            let (x2, y2) = coord(t[1]);
            let (x3, y3) = coord(t[2]);
            let b = [y2 - y3, y3 - y1, y1 - y2];
            let c = [x3 - x2, x1 - x3, x2 - x1];
            let mut k = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    k[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * tri_area);
                }
            }
            geo.push(k);
        }

        let mut interior_of = vec![usize::MAX; n * n];
        let mut interior_ids = Vec::new();
        for iy in 1..n - 1 {
            for ix in 1..n - 1 {
                interior_of[node(ix, iy)] = interior_ids.len();
                interior_ids.push(node(ix, iy));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(obs_seed);
        let mut obs_points = Vec::with_capacity(k_obs);
        for _ in 0..k_obs {
            let x = 0.1 + 0.8 * rng.gen_range(0.0..1.0f64);
            let y = 0.1 + 0.8 * rng.gen_range(0.0..1.0f64);
            obs_points.push((x, y));
        }
        let mut obs_mat = DMatrix::zeros(k_obs, n * n);
        for (k, &(x, y)) in obs_points.iter().enumerate() {
            for (id, w) in interpolation_weights(n, x, y) {
                obs_mat[(k, id)] += w;
            }
        }

        Ok(DarcyOperator {
            n,
            source,
            triangles,
            geo,
            tri_area,
            interior_of,
            interior_ids,
            obs_points,
            obs_mat,
        })
    }

    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_obs(&self) -> usize {
        self.obs_mat.nrows()
    }

    pub fn obs_points(&self) -> &[(f64, f64)] {
        &self.obs_points
    }

    fn check_dim(&self, u: &DVector<f64>) -> Result<()> {
        if u.nrows() != self.dim() {
            return Err(EkiError::DimensionMismatch {
                what: "darcy parameter field",
                expected: self.dim(),
                actual: u.nrows(),
            });
        }
        Ok(())
    }

    /// Assemble and factor the interior stiffness for the coefficient field
    /// `exp(u)` (arithmetic mean of the three nodal values per triangle) and
    /// return the factorization with the full nodal pressure.
    fn factor_and_solve(
        &self,
        u: &DVector<f64>,
    ) -> Result<(nalgebra::Cholesky<f64, Dyn>, DVector<f64>)> {
        self.check_dim(u)?;
        let ni = self.interior_ids.len();
        let eu = u.map(f64::exp);
        let mut s = DMatrix::zeros(ni, ni);
        let mut load = DVector::zeros(ni);
        for (t, k) in self.triangles.iter().zip(&self.geo) {
            let kappa = (eu[t[0]] + eu[t[1]] + eu[t[2]]) / 3.0;
            for i in 0..3 {
                let gi = self.interior_of[t[i]];
                if gi == usize::MAX {
                    continue;
                }
                load[gi] += self.source * self.tri_area / 3.0;
                for j in 0..3 {
                    let gj = self.interior_of[t[j]];
                    if gj != usize::MAX {
                        s[(gi, gj)] += kappa * k[i][j];
                    }
                }
            }
        }
        let chol = nalgebra::Cholesky::new(s).ok_or_else(|| {
            EkiError::Factorization("darcy stiffness not positive definite".into())
        })?;
        let p_int = chol.solve(&load);
        let mut p = DVector::zeros(self.dim());
        for (gi, &id) in self.interior_ids.iter().enumerate() {
            p[id] = p_int[gi];
        }
        Ok((chol, p))
    }

    /// Full nodal pressure field for the log-conductivity `u`.
    pub fn solve(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.factor_and_solve(u)?.1)
    }

    /// Pressures at the observation points.
    pub fn observe(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.obs_mat * self.solve(u)?)
    }

    /// Restrict a full nodal vector to interior dofs.
    fn to_interior(&self, v: nalgebra::DVectorView<f64>) -> DVector<f64> {
        DVector::from_fn(self.interior_ids.len(), |gi, _| v[self.interior_ids[gi]])
    }

    /// For each triangle, `K_geo * p|_T`; the building block of every
    /// sensitivity: d(obs_k)/d(u_m) = -w_k^T (dS/du_m) p with
    /// (dS/du_m) p = sum_{T owning m} exp(u_m)/3 * scatter(K_geo p|_T).
    fn sensitivity_accumulate(
        &self,
        u: &DVector<f64>,
        p: &DVector<f64>,
        adjoints: &DMatrix<f64>, // full nodal, one column per output
    ) -> DMatrix<f64> {
        let n_out = adjoints.ncols();
        let mut jac = DMatrix::zeros(n_out, self.dim());
        let eu = u.map(f64::exp);
        for (t, k) in self.triangles.iter().zip(&self.geo) {
            let pt = [p[t[0]], p[t[1]], p[t[2]]];
            let mut r = [0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    r[i] += k[i][j] * pt[j];
                }
            }
            for col in 0..n_out {
                let w = adjoints.column(col);
                let s: f64 = (0..3).map(|i| w[t[i]] * r[i]).sum();
                for &m in t {
                    jac[(col, m)] -= eu[m] / 3.0 * s;
                }
            }
        }
        jac
    }

    fn scatter_interior(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.dim());
        for (gi, &id) in self.interior_ids.iter().enumerate() {
            full[id] = v[gi];
        }
        full
    }
}

/// P1 interpolation weights of the point `(x, y)` in the mesh: up to three
/// `(node, weight)` pairs.
fn interpolation_weights(n: usize, x: f64, y: f64) -> Vec<(usize, f64)> {
    let h = 1.0 / (n - 1) as f64;
    let ix = ((x / h).floor() as usize).min(n - 2);
    let iy = ((y / h).floor() as usize).min(n - 2);
    let xi = x / h - ix as f64;
    let zeta = y / h - iy as f64;
    let node = |dx: usize, dy: usize| (iy + dy) * n + (ix + dx);
    if xi >= zeta {
        // triangle (a, b, d) below the square diagonal
        vec![
            (node(0, 0), 1.0 - xi),
            (node(1, 0), xi - zeta),
            (node(1, 1), zeta),
        ]
    } else {
        // triangle (a, d, c) above it
        vec![
            (node(0, 0), 1.0 - zeta),
            (node(1, 1), xi),
            (node(0, 1), zeta - xi),
        ]
    }
}

/// Darcy operator bundled with data and covariances as a forward model.
pub struct DarcyModel {
    op: DarcyOperator,
    data: DVector<f64>,
    gamma: Arc<Spd>,
    c0: Arc<Spd>,
}

impl DarcyModel {
    pub fn new(
        op: DarcyOperator,
        data: DVector<f64>,
        gamma: Arc<Spd>,
        c0: Arc<Spd>,
    ) -> Result<Self> {
        if data.nrows() != op.k_obs() {
            return Err(EkiError::DimensionMismatch {
                what: "DarcyModel (data length)",
                expected: op.k_obs(),
                actual: data.nrows(),
            });
        }
        Ok(DarcyModel {
            op,
            data,
            gamma,
            c0,
        })
    }

    pub fn operator(&self) -> &DarcyOperator {
        &self.op
    }

    pub fn prior_cov_arc(&self) -> Arc<Spd> {
        Arc::clone(&self.c0)
    }
}

impl ForwardModel for DarcyModel {
    fn dim_u(&self) -> usize {
        self.op.dim()
    }

    fn dim_obs(&self) -> usize {
        self.op.k_obs()
    }

    fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        self.op.observe(u).expect("dimension checked on entry")
    }

    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (chol, p) = self.op.factor_and_solve(u).ok()?;
        // one adjoint per observation, all against the cached factorization
        let k = self.op.k_obs();
        let mut adjoints = DMatrix::zeros(self.op.dim(), k);
        for i in 0..k {
            let row = self.op.obs_mat.row(i).transpose();
            let rhs = self.op.to_interior(row.as_view());
            let w = chol.solve(&rhs);
            adjoints.set_column(i, &self.op.scatter_interior(&w));
        }
        Some(self.op.sensitivity_accumulate(u, &p, &adjoints))
    }

    fn vjp(&self, u: &DVector<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
        let (chol, p) = self.op.factor_and_solve(u).ok()?;
        let combined = self.op.obs_mat.transpose() * w;
        let rhs = self.op.to_interior(combined.as_view());
        let z = chol.solve(&rhs);
        let adjoint = self.op.scatter_interior(&z);
        let mat = DMatrix::from_columns(&[adjoint]);
        let jac_row = self.op.sensitivity_accumulate(u, &p, &mat);
        Some(jac_row.row(0).transpose())
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
    use std::f64::consts::PI;

    /// Series solution of `-lap p = 1` on the unit square at `(x, y)`.
    fn poisson_series(x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        let mut m = 1;
        while m < 200 {
            let mut n = 1;
            while n < 200 {
                let mf = m as f64;
                let nf = n as f64;
                sum += 16.0 / (PI.powi(4) * mf * nf * (mf * mf + nf * nf))
                    * (mf * PI * x).sin()
                    * (nf * PI * y).sin();
                n += 2;
            }
            m += 2;
        }
        sum
    }

    fn center_pressure(n: usize) -> f64 {
        let op = DarcyOperator::new(n, 1.0, 1, 99).unwrap();
        let p = op.solve(&DVector::zeros(n * n)).unwrap();
        let w = interpolation_weights(n, 0.5, 0.5);
        w.iter().map(|&(id, wt)| wt * p[id]).sum()
    }

    #[test]
    fn zero_field_center_pressure_matches_series() {
        let exact = poisson_series(0.5, 0.5);
        assert!((exact - 0.073_671).abs() < 1e-5, "series value {exact}");
        let got = center_pressure(32);
        assert!(
            (got - exact).abs() < 2e-3,
            "center pressure {got} vs {exact}"
        );
    }

    #[test]
    fn mesh_refinement_is_second_order() {
        let exact = poisson_series(0.5, 0.5);
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let e = (center_pressure(n) - exact).abs();
            hs.push((1.0 / (n - 1) as f64).ln());
            errs.push(e.ln());
        }
        let slope = crate::linalg::ls_slope(&hs, &errs).unwrap();
        assert!(
            (1.5..=2.5).contains(&slope),
            "observed convergence order {slope}"
        );
    }

    #[test]
    fn constant_log_conductivity_rescales_pressure() {
        let n = 10;
        let op = DarcyOperator::new(n, 1.0, 3, 4).unwrap();
        let p0 = op.solve(&DVector::zeros(n * n)).unwrap();
        let c = 0.7;
        let pc = op.solve(&DVector::from_element(n * n, c)).unwrap();
        let err = (&pc * c.exp() - &p0).norm() / p0.norm();
        assert!(err < 1e-12, "scaling error {err}");
    }

    #[test]
    fn observation_points_live_in_the_inner_square_and_are_seeded() {
        let op = DarcyOperator::new(8, 1.0, 50, 303).unwrap();
        for &(x, y) in op.obs_points() {
            assert!((0.1..0.9).contains(&x));
            assert!((0.1..0.9).contains(&y));
        }
        let op2 = DarcyOperator::new(8, 1.0, 50, 303).unwrap();
        assert_eq!(op.obs_points(), op2.obs_points());
        let op3 = DarcyOperator::new(8, 1.0, 50, 304).unwrap();
        assert_ne!(op.obs_points(), op3.obs_points());
    }

    #[test]
    fn interpolation_weights_are_barycentric() {
        for &(x, y) in &[(0.3, 0.2), (0.21, 0.68), (0.5, 0.5), (0.11, 0.11)] {
            let w = interpolation_weights(7, x, y);
            let total: f64 = w.iter().map(|&(_, wt)| wt).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&(_, wt)| (-1e-12..=1.0 + 1e-12).contains(&wt)));
            // weights reproduce coordinates of the point
            let n = 7;
            let h = 1.0 / 6.0;
            let (mut xr, mut yr) = (0.0, 0.0);
            for &(id, wt) in &w {
                xr += wt * (id % n) as f64 * h;
                yr += wt * (id / n) as f64 * h;
            }
            assert!((xr - x).abs() < 1e-12 && (yr - y).abs() < 1e-12);
        }
    }

    fn small_model(n: usize, k: usize) -> DarcyModel {
        let op = DarcyOperator::new(n, 1.0, k, 7).unwrap();
        let d = op.dim();
        let data = DVector::zeros(k);
        DarcyModel::new(
            op,
            data,
            Arc::new(Spd::scaled_identity(k, 0.01).unwrap()),
            Arc::new(Spd::scaled_identity(d, 1.0).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let m = small_model(6, 5);
        let d = m.dim_u();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u = DVector::from_fn(d, |_, _| rng.gen_range(-0.3..0.3));
        let jac = m.jacobian(&u).unwrap();
        for i in (0..d).step_by(5) {
            let h = 1e-6 * (1.0 + u[i].abs());
            let mut up = u.clone();
            up[i] += h;
            let mut dn = u.clone();
            dn[i] -= h;
            let col = (m.apply(&up) - m.apply(&dn)) / (2.0 * h);
            for r in 0..m.dim_obs() {
                assert!(
                    (jac[(r, i)] - col[r]).abs() <= 1e-6 * (1.0 + col[r].abs()),
                    "J[{r},{i}] = {} vs fd {}",
                    jac[(r, i)],
                    col[r]
                );
            }
        }
    }

    #[test]
    fn vjp_agrees_with_dense_jacobian() {
        use rand::{Rng, SeedableRng};
        let m = small_model(5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = DVector::from_fn(m.dim_u(), |_, _| rng.gen_range(-0.5..0.5));
        let w = DVector::from_fn(m.dim_obs(), |_, _| rng.gen_range(-1.0..1.0));
        let direct = m.jacobian(&u).unwrap().transpose() * &w;
        let via_adjoint = m.vjp(&u, &w).unwrap();
        assert!((direct - via_adjoint).norm() < 1e-11);
    }

    #[test]
    fn mesh_validation() {
        assert!(DarcyOperator::new(2, 1.0, 5, 1).is_err());
        assert!(DarcyOperator::new(8, 1.0, 0, 1).is_err());
    }
}
