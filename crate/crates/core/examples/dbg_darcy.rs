use std::time::Instant;

use eki_core::experiments::config::{PenaltyConfig, PenaltyKind};
use eki_core::experiments::presets;
use eki_core::experiments::run::run_experiment;
use nalgebra::DVector;

fn main() {
    if std::env::var("DBG_SKIP_DARCY").is_err() {
        desk_darcy();
    }
    adaptive_family();
}

fn desk_darcy() {
    // darcy desk preset: margins and runtime
    let cfg = presets::darcy(true);
    let t0 = Instant::now();
    let art = run_experiment(&cfg).unwrap();
    let rec = &art.record;
    let max_margin = rec
        .rows
        .iter()
        .map(|r| r.margin.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "darcy desk: {:.1}s rows {} accepted {} max_margin {:+.4e} abort {:?} ref_conv {:?}",
        t0.elapsed().as_secs_f64(),
        rec.rows.len(),
        rec.counts.accepted,
        max_margin,
        rec.abort,
        art.reference.as_ref().map(|r| r.converged)
    );
    let last = rec.rows.last().unwrap();
    println!(
        "  final err_param {:?} err_obs {:?} v_e {:.3e}",
        last.err_param, last.err_obs, last.v_e
    );
}

fn adaptive_family() {
    // adaptive-tau family: adaptive run carries the common reference u*
    let mut adaptive = presets::adaptive_tau(true);
    if let Ok(s) = std::env::var("DBG_OBS_SEED") {
        adaptive.darcy2d.as_mut().unwrap().obs_seed = s.parse().unwrap();
    }
    if let Ok(s) = std::env::var("DBG_KOBS") {
        adaptive.darcy2d.as_mut().unwrap().k_obs = s.parse().unwrap();
    }
    if let Ok(s) = std::env::var("DBG_SLACK") {
        adaptive.constraints.slack = s.parse().unwrap();
    }
    if let Ok(s) = std::env::var("DBG_LAMBDA") {
        adaptive.lambda = s.parse().unwrap();
    }
    if let Ok(s) = std::env::var("DBG_SEEDS") {
        let v: Vec<u64> = s.split(',').map(|x| x.parse().unwrap()).collect();
        adaptive.truth_seed = v[0];
        adaptive.noise_seed = v[1];
        adaptive.ensemble_seed = v[2];
    }
    let t0 = Instant::now();
    let art_a = run_experiment(&adaptive).unwrap();
    let u_star = DVector::from_column_slice(&art_a.reference.as_ref().unwrap().u_star);
    let mean_a = DVector::from_column_slice(&art_a.record.final_mean);
    let err_a = (&mean_a - &u_star).norm();
    println!(
        "adaptive: {:.1}s accepted {} rej {}/{} err {:.6e} max_margin {:+.3e}",
        t0.elapsed().as_secs_f64(),
        art_a.record.counts.accepted,
        art_a.record.counts.rejected_error,
        art_a.record.counts.rejected_feasibility,
        err_a,
        art_a
            .record
            .rows
            .iter()
            .map(|r| r.margin.unwrap())
            .fold(f64::NEG_INFINITY, f64::max)
    );
    let mut fixed_errs = Vec::new();
    for tau in [1.0, 10.0, 100.0, 1000.0, 10000.0] {
        let mut cfg = adaptive.clone();
        cfg.penalty = PenaltyConfig {
            kind: PenaltyKind::Fixed,
            tau0: tau,
        };
        cfg.reference.enabled = false;
        let t0 = Instant::now();
        let art_f = run_experiment(&cfg).unwrap();
        let mean_f = DVector::from_column_slice(&art_f.record.final_mean);
        let err_f = (&mean_f - &u_star).norm();
        println!(
            "tau {tau:>7.0}: {:.1}s accepted {:>7} rej {}/{} err {:.6e}",
            t0.elapsed().as_secs_f64(),
            art_f.record.counts.accepted,
            art_f.record.counts.rejected_error,
            art_f.record.counts.rejected_feasibility,
            err_f
        );
        fixed_errs.push((tau, err_f, art_f.record.counts.accepted));
    }
    let best = fixed_errs.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let mono = fixed_errs.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12));
    println!(
        "A12: adaptive_err {:.4e} <= 2x best {:.4e}: {}; fixed monotone: {}; steps adaptive {} <= tau1e4 {}",
        err_a,
        best,
        err_a <= 2.0 * best,
        mono,
        art_a.record.counts.accepted,
        fixed_errs.last().unwrap().2
    );
}
