use std::time::Instant;

use eki_core::experiments::diagnostics::{
    collapse_bound_overlay, rate_estimate, RateField, TheoryConstants,
};
use eki_core::experiments::presets;
use eki_core::experiments::run::run_experiment;

fn main() {
    let mut cfg = if std::env::var("DBG_LOG").is_ok() {
        presets::pseudolinear_log(true)
    } else {
        presets::pseudolinear(true)
    };
    if let Ok(t) = std::env::var("DBG_T") {
        cfg.t_final = t.parse().unwrap();
    }
    if let Ok(s) = std::env::var("DBG_SEEDS") {
        let v: Vec<u64> = s.split(',').map(|x| x.parse().unwrap()).collect();
        cfg.truth_seed = v[0];
        cfg.noise_seed = v[1];
        cfg.ensemble_seed = v[2];
    }
    if std::env::var("DBG_PLAIN").is_ok() {
        cfg.variant = eki_core::experiments::config::VariantKind::Plain;
        cfg.reference.enabled = false;
        let art = run_experiment(&cfg).unwrap();
        let rec = &art.record;
        let last = rec.rows.last().unwrap();
        println!(
            "plain control: rows {} final margin {:+.6e} (need > 0) v_e {:.3e}",
            rec.rows.len(),
            last.margin.unwrap(),
            last.v_e
        );
        return;
    }
    let t0 = Instant::now();
    let art = run_experiment(&cfg).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let rec = &art.record;
    println!(
        "elapsed {elapsed:.1}s rows {} accepted {} rej_err {} rej_feas {} abort {:?}",
        rec.rows.len(),
        rec.counts.accepted,
        rec.counts.rejected_error,
        rec.counts.rejected_feasibility,
        rec.abort
    );
    let k = TheoryConstants::compute(&art.c0, &art.gamma, cfg.j, rec.rows[0].v_e).unwrap();
    println!(
        "sigma_min {:.3e} sigma_max {:.3e} lambda_max {:.3e} v_e0 {:.3e}",
        k.sigma_min, k.sigma_max, k.lambda_max, k.v_e0
    );
    let overlay = collapse_bound_overlay(&rec.rows, &k, 0.05).unwrap();
    println!(
        "A1 violations {} max_excess {:.3e}",
        overlay.violations, overlay.max_relative_excess
    );
    let slope = rate_estimate(&rec.rows, RateField::Spread, 0.3).unwrap();
    println!("A2 slope {slope:.4}");
    match eki_core::experiments::diagnostics::grad_flow_error_scaling(&art.flow, &art.trajectory)
    {
        Ok(sc) => println!(
            "A7 exponent {:.4} max_ratio {:.3e} pts {}",
            sc.exponent,
            sc.max_ratio,
            sc.errs.len()
        ),
        Err(e) => println!("A7 failed: {e}"),
    }
    let max_sub = rec.rows.iter().map(|r| r.subspace_dist).fold(0.0, f64::max);
    println!("A4 max subspace dist {max_sub:.3e}");
    let max_margin = rec
        .rows
        .iter()
        .map(|r| r.margin.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    println!("A3 max margin {max_margin:.6}");
    let r = art.reference.as_ref().unwrap();
    let u_ref = r.u_ref();
    let final_mean = nalgebra::DVector::from_column_slice(&rec.final_mean);
    let err = (&final_mean - &u_ref).norm();
    println!(
        "A6 err {:.6e} rel {:.6e} (need <= 1e-2)",
        err,
        err / u_ref.norm()
    );
    let n = rec.rows.len();
    let last_decade: Vec<f64> = rec.rows[..]
        .iter()
        .filter(|row| row.t >= cfg.t_final / 10.0)
        .map(|row| row.err_param.unwrap())
        .collect();
    let mono = last_decade.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    println!("A6 monotone last decade: {mono} ({} pts)", last_decade.len());
    println!("rows[n-1] err_param {:?}", rec.rows[n - 1].err_param);

    // stationarity at both endpoints under the run's own barrier objective
    let cs = art.diag_constraints.clone().unwrap();
    let pot =
        eki_core::potentials::RegularizedPotential::new(art.flow.model.clone(), cfg.lambda)
            .unwrap();
    let bp = eki_core::potentials::BarrierPotential::new(pot, cs.clone(), cfg.penalty.tau0)
        .unwrap();
    let sub = eki_core::ensemble::AffineSubspace::from_ensemble(&art.trajectory.ensembles[0])
        .unwrap();
    let proj = |g: &nalgebra::DVector<f64>| &sub.basis * (sub.basis.transpose() * g);
    for (name, pt) in [("mean_T", &final_mean), ("u_ref", &u_ref)] {
        let g = bp.grad_phi_barrier(pt).unwrap();
        println!(
            "{name}: |u| {:.4} margin {:+.6e} phi_b {:.8e} pgrad {:.3e} span_dist {:.3e}",
            pt.norm(),
            cs.feasibility_margin(pt),
            bp.phi_barrier(pt).unwrap(),
            proj(&g).norm(),
            sub.distance(pt)
        );
    }
    println!(
        "ref kind {:?} tau {:?} converged {} stat_norm {:?} compl {:?}",
        r.kind, r.tau, r.converged, r.stationarity_norm, r.complementarity
    );

    // basin check: direct fixed-tau solves from the flow's start and from
    // its final mean, against the ladder-continuation reference
    let mean0 = art.trajectory.ensembles[0].mean();
    let direct = eki_core::reference_solver::solve_barrier(&bp, &mean0, Some(&sub), 1e-8).unwrap();
    println!(
        "direct from mean0: phi_b {:.8e} pgrad {:.3e} conv {} |d-mean_T| {:.4e} |d-u_ref| {:.4e}",
        direct.objective,
        direct.grad_norm,
        direct.converged,
        (&direct.minimizer - &final_mean).norm(),
        (&direct.minimizer - &u_ref).norm()
    );
    let polish = eki_core::reference_solver::solve_barrier(&bp, &final_mean, Some(&sub), 1e-8)
        .unwrap();
    println!(
        "polish from mean_T: phi_b {:.8e} pgrad {:.3e} conv {} |p-mean_T| {:.4e} |p-d| {:.4e}",
        polish.objective,
        polish.grad_norm,
        polish.converged,
        (&polish.minimizer - &final_mean).norm(),
        (&polish.minimizer - &direct.minimizer).norm()
    );
    // error-to-polish trend along the tail of the run
    for i in (0..art.trajectory.ensembles.len()).step_by(10).skip(4) {
        let m = art.trajectory.ensembles[i].mean();
        println!(
            "  t {:10.3e} |mean-polish| {:.4e} |mean-u_ref| {:.4e} margin {:+.4e}",
            art.trajectory.times[i],
            (&m - &polish.minimizer).norm(),
            (&m - &u_ref).norm(),
            cs.feasibility_margin(&m)
        );
    }
    for i in [0usize, 30, 60, 90, n - 1] {
        let row = &rec.rows[i];
        println!(
            "t {:10.3e} v_e {:9.3e} eta {:9.3e} margin {:9.5} err {:9.3e} tau {:.1e} rho {:.3}",
            row.t,
            row.v_e,
            row.eta_min,
            row.margin.unwrap(),
            row.err_param.unwrap(),
            row.tau_t,
            row.rho_t
        );
    }
}
