//! Experiment driver: build the inverse problem a config describes, solve
//! the reference problems, integrate the selected flow, and assemble the
//! output record. `run_to_dir` additionally writes the on-disk artifacts
//! (`config.toml`, `record.csv`, `record.json`, `reference.json`, and
//! `abort.json` when a run dies).

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{
    ConstraintKind, ExperimentConfig, InflationKind, ModelKind, PenaltyKind, VariantKind,
};
use super::record::{CheckpointRow, ReferenceKind, SeedSet, TrajectoryRecord, FORMAT_VERSION};
use crate::constraints::{project_box, BoxBounds, ConstraintSet};
use crate::dynamics::{FlowSpec, InflationSchedule, PenaltySchedule, Variant};
use crate::ensemble::{min_eigenvalue_on_span, subspace_distance, AffineSubspace, Ensemble};
use crate::error::{EkiError, Result};
use crate::forward_models::darcy::{DarcyModel, DarcyOperator};
use crate::forward_models::heat1d::build_heat1d;
use crate::forward_models::kl::{KlPrior1D, KlPrior2D};
use crate::forward_models::make_box_from_truth;
use crate::forward_models::pseudo::PseudoLinearModel;
use crate::integrator::{integrate_flow, DpOptions, FlowTrajectory};
use crate::linalg::{span_basis, Spd};
use crate::potentials::{BarrierPotential, ForwardModel, RegularizedPotential};
use crate::reference_solver::{solve_barrier, solve_constrained};

/// The constraint geometry a config resolves to, kept separate from the
/// `ConstraintSet` so pre-projection can use the exact box/ball parameters.
pub enum BuiltConstraints {
    None,
    Box(BoxBounds),
    Ball { cov: Arc<Spd>, radius: f64 },
}

impl BuiltConstraints {
    pub fn to_set(&self, dim: usize) -> Result<Option<ConstraintSet>> {
        match self {
            BuiltConstraints::None => Ok(None),
            BuiltConstraints::Box(b) => Ok(Some(ConstraintSet::make_box(dim, b)?)),
            BuiltConstraints::Ball { cov, radius } => {
                Ok(Some(ConstraintSet::make_norm_ball(cov.clone(), *radius)?))
            }
        }
    }

    /// Move a point strictly inside the feasible set: project, then pull a
    /// `shrink` fraction toward the center (box) or rescale onto the sphere
    /// of `(1 - shrink)` times the radius (ball). Points already deep inside
    /// the ball are left alone; box points always feel the pull.
    pub fn pre_project(&self, u: &DVector<f64>, shrink: f64) -> DVector<f64> {
        match self {
            BuiltConstraints::None => u.clone(),
            BuiltConstraints::Box(b) => {
                let mut out = project_box(b, u);
                for (k, &i) in b.indices.iter().enumerate() {
                    let c = 0.5 * (b.lower[k] + b.upper[k]);
                    out[i] += shrink * (c - out[i]);
                }
                out
            }
            BuiltConstraints::Ball { cov, radius } => {
                let q = 0.5 * cov.quad(u);
                let target = (1.0 - shrink) * radius;
                if q > target && q > 0.0 {
                    u * (target / q).sqrt()
                } else {
                    u.clone()
                }
            }
        }
    }
}

enum PriorSampler {
    Heat(KlPrior1D),
    Darcy(KlPrior2D),
}

impl PriorSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self {
            PriorSampler::Heat(p) => p.sample(rng),
            PriorSampler::Darcy(p) => p.sample(rng),
        }
    }
}

/// Everything the config determines before any particle moves: the forward
/// model with its data already attached, the ground truth that generated the
/// data, and the constraint geometry.
pub struct BuiltProblem {
    pub model: Arc<dyn ForwardModel>,
    pub truth: DVector<f64>,
    pub data: DVector<f64>,
    pub c0: Arc<Spd>,
    pub gamma: Arc<Spd>,
    pub constraints: BuiltConstraints,
    prior: PriorSampler,
    obs_seed: Option<u64>,
}

fn add_noise(g: &DVector<f64>, variance: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = variance.sqrt();
    DVector::from_fn(g.nrows(), |i, _| {
        let xi: f64 = rand::Rng::sample(&mut rng, StandardNormal);
        g[i] + sd * xi
    })
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<BuiltProblem> {
    let (model, truth, data, c0, gamma, prior, obs_seed): (
        Arc<dyn ForwardModel>,
        _,
        _,
        _,
        _,
        _,
        _,
    ) = match cfg.model {
        ModelKind::Heat1d => {
            let hc = cfg.heat1d.unwrap_or_default();
            let op = build_heat1d(hc.dx, hc.dt)?;
            let prior = KlPrior1D::new(
                op.grid(),
                cfg.prior.sigma2,
                cfg.prior.length_scale,
                cfg.prior.truncation,
            )?;
            let c0 = Arc::new(prior.covariance()?);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.truth_seed);
            let truth = prior.sample(&mut rng);
            let a = op.into_matrix();
            let dim_obs = a.nrows();
            let gamma = Arc::new(Spd::scaled_identity(dim_obs, cfg.gamma)?);
            // run the truth through the same map the model will apply
            let probe = PseudoLinearModel::from_arcs(
                a.clone(),
                hc.eps,
                DVector::zeros(dim_obs),
                gamma.clone(),
                c0.clone(),
            );
            let data = add_noise(&probe.apply(&truth), cfg.gamma, cfg.noise_seed);
            let model =
                PseudoLinearModel::from_arcs(a, hc.eps, data.clone(), gamma.clone(), c0.clone());
            (
                Arc::new(model) as Arc<dyn ForwardModel>,
                truth,
                data,
                c0,
                gamma,
                PriorSampler::Heat(prior),
                None,
            )
        }
        ModelKind::Darcy2d => {
            let dc = cfg.darcy2d.unwrap_or_default();
            let op = DarcyOperator::new(dc.n, dc.f, dc.k_obs, dc.obs_seed)?;
            let prior = KlPrior2D::new(dc.n, cfg.prior.tau_prior, cfg.prior.alpha, cfg.prior.terms)?;
            let c0 = Arc::new(prior.covariance()?);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.truth_seed);
            let truth = prior.sample(&mut rng);
            let g_truth = op.observe(&truth)?;
            let gamma = Arc::new(Spd::scaled_identity(g_truth.nrows(), cfg.gamma)?);
            let data = add_noise(&g_truth, cfg.gamma, cfg.noise_seed);
            let model = DarcyModel::new(op, data.clone(), gamma.clone(), c0.clone())?;
            (
                Arc::new(model) as Arc<dyn ForwardModel>,
                truth,
                data,
                c0,
                gamma,
                PriorSampler::Darcy(prior),
                Some(dc.obs_seed),
            )
        }
    };

    let constraints = match cfg.constraints.kind {
        ConstraintKind::None => BuiltConstraints::None,
        ConstraintKind::Box => {
            let lo = cfg.constraints.lower.expect("validated");
            let hi = cfg.constraints.upper.expect("validated");
            BuiltConstraints::Box(BoxBounds::uniform(truth.nrows(), lo, hi)?)
        }
        ConstraintKind::BoxFromTruth => {
            BuiltConstraints::Box(make_box_from_truth(&truth, cfg.constraints.slack)?)
        }
        ConstraintKind::NormBall => {
            let radius = cfg.constraints.radius_factor * 0.5 * c0.quad(&truth);
            BuiltConstraints::Ball {
                cov: c0.clone(),
                radius,
            }
        }
    };

    Ok(BuiltProblem {
        model,
        truth,
        data,
        c0,
        gamma,
        constraints,
        prior,
        obs_seed,
    })
}

/// Reference minimizers for the run, serialized to `reference.json`.
/// `u_star_tau` is the central-path point at the run's own fixed penalty;
/// `u_star` is the end of the continuation ladder (or the unconstrained
/// minimizer when no constraints apply). KKT residuals accompany
/// constrained references; `grad_norm` is the exit gradient norm of an
/// unconstrained solve. With `subspace_restricted` set, the minimizers are
/// optimal over the initial ensemble's affine span, not the full space, and
/// the stationarity norm is still reported in the full space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub kind: ReferenceKind,
    pub tau: Option<f64>,
    pub subspace_restricted: bool,
    pub u_star_tau: Option<Vec<f64>>,
    pub u_star: Vec<f64>,
    pub grad_norm: Option<f64>,
    pub stationarity_norm: Option<f64>,
    pub complementarity: Option<f64>,
    pub primal_feasibility: Option<f64>,
    pub multipliers: Option<Vec<f64>>,
    pub multipliers_nonnegative: Option<bool>,
    pub converged: bool,
}

impl ReferenceSolution {
    /// The point the record's error columns are measured against: the
    /// fixed-penalty central-path point when the run uses a fixed penalty,
    /// `u_star` otherwise.
    pub fn u_ref(&self) -> DVector<f64> {
        match (&self.kind, &self.u_star_tau) {
            (ReferenceKind::FixedPenalty, Some(v)) => DVector::from_column_slice(v),
            _ => DVector::from_column_slice(&self.u_star),
        }
    }

    pub fn u_star_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u_star)
    }
}

/// Powers of ten from 1 up to (strictly below) `top`, then `top` itself.
/// A `top` below one gives the single-stage ladder `[top]`.
pub fn ladder_to(top: f64) -> Vec<f64> {
    let mut ladder = Vec::new();
    let mut v = 1.0;
    while v < top * (1.0 - 1e-9) {
        ladder.push(v);
        v *= 10.0;
    }
    ladder.push(top);
    ladder
}

fn solve_reference(
    cfg: &ExperimentConfig,
    problem: &BuiltProblem,
    diag_cs: Option<&ConstraintSet>,
    start: &DVector<f64>,
    sub: Option<&AffineSubspace>,
) -> Result<ReferenceSolution> {
    // the plain variant tracks the pure misfit flow, so its limit point
    // carries no regularization term
    let lambda_eff = if cfg.variant == VariantKind::Plain {
        0.0
    } else {
        cfg.lambda
    };
    let pot = RegularizedPotential::new(problem.model.clone(), lambda_eff)?;
    match (cfg.variant.is_barrier(), diag_cs) {
        (true, Some(cs)) => {
            let (kind, tau, kkt_tau) = match cfg.penalty.kind {
                PenaltyKind::Fixed => {
                    let tau0 = cfg.penalty.tau0;
                    let kkt = solve_constrained(&pot, cs, start, &ladder_to(tau0), sub)?;
                    (ReferenceKind::FixedPenalty, Some(tau0), Some(kkt))
                }
                PenaltyKind::Linear => (ReferenceKind::Constrained, None, None),
            };
            let top = tau.unwrap_or(0.0).max(1e6);
            let kkt_star = solve_constrained(&pot, cs, start, &ladder_to(top), sub)?;
            Ok(ReferenceSolution {
                kind,
                tau,
                subspace_restricted: sub.is_some(),
                u_star_tau: kkt_tau.map(|k| k.point.as_slice().to_vec()),
                u_star: kkt_star.point.as_slice().to_vec(),
                grad_norm: None,
                stationarity_norm: Some(kkt_star.stationarity_norm),
                complementarity: Some(kkt_star.complementarity),
                primal_feasibility: Some(kkt_star.primal_feasibility),
                multipliers: Some(kkt_star.multipliers.as_slice().to_vec()),
                multipliers_nonnegative: Some(kkt_star.multipliers_nonnegative),
                converged: true,
            })
        }
        _ => {
            let dim = problem.model.dim_u();
            let bp = BarrierPotential::new(pot, ConstraintSet::empty(dim), 1.0)?;
            let res = solve_barrier(&bp, start, sub, cfg.reference.tol_grad)?;
            Ok(ReferenceSolution {
                kind: ReferenceKind::Unconstrained,
                tau: None,
                subspace_restricted: sub.is_some(),
                u_star_tau: None,
                u_star: res.minimizer.as_slice().to_vec(),
                grad_norm: Some(res.grad_norm),
                stationarity_norm: None,
                complementarity: None,
                primal_feasibility: None,
                multipliers: None,
                multipliers_nonnegative: None,
                converged: res.converged,
            })
        }
    }
}

/// A completed run with everything the diagnostics need still in memory.
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub record: TrajectoryRecord,
    pub reference: Option<ReferenceSolution>,
    pub truth: DVector<f64>,
    pub flow: FlowSpec,
    pub trajectory: FlowTrajectory,
    /// Constraint set from the config, present even when the variant
    /// ignores it (the margin column is always measured against it).
    pub diag_constraints: Option<ConstraintSet>,
    pub c0: Arc<Spd>,
    pub gamma: Arc<Spd>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    let dim = problem.model.dim_u();
    let diag_cs = problem.constraints.to_set(dim)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.ensemble_seed);
    let mut cols: Vec<DVector<f64>> = (0..cfg.j).map(|_| problem.prior.sample(&mut rng)).collect();
    if cfg.pre_project.enabled {
        for c in &mut cols {
            *c = problem.constraints.pre_project(c, cfg.pre_project.shrink);
        }
    }
    let ens0 = Ensemble::from_columns(&cols)?;
    let mean0 = ens0.mean();

    let variant = match cfg.variant {
        VariantKind::Plain => Variant::PlainEki,
        VariantKind::Tikhonov => Variant::TikhonovEki,
        VariantKind::BarrierMean => Variant::BarrierMean,
        VariantKind::BarrierParticle => Variant::BarrierPerParticle,
    };
    let inflation = match cfg.inflation.kind {
        InflationKind::Off => InflationSchedule::Off,
        InflationKind::Constant => InflationSchedule::Constant {
            rho0: cfg.inflation.rho0,
        },
        InflationKind::LogIncreasing => InflationSchedule::LogIncreasing,
    };
    let penalty = match cfg.penalty.kind {
        PenaltyKind::Fixed => PenaltySchedule::Constant {
            tau0: cfg.penalty.tau0,
        },
        PenaltyKind::Linear => PenaltySchedule::Linear,
    };
    let flow_cs = if cfg.variant.is_barrier() {
        diag_cs.clone()
    } else {
        None
    };
    let flow = FlowSpec::new(
        variant,
        problem.model.clone(),
        cfg.lambda,
        inflation,
        cfg.inflation.beta,
        penalty,
        flow_cs,
    )?;

    // fail before the (possibly long) reference solve: the flow itself
    // would reject this start anyway
    if let Some(cs) = flow.constraints.as_ref() {
        if !cs.strictly_feasible(&mean0) {
            return Err(EkiError::InfeasibleStart(format!(
                "initial ensemble mean has feasibility margin {:.6e}; enable pre-projection \
                 or widen the constraint set",
                cs.feasibility_margin(&mean0)
            )));
        }
    }

    let sub = if cfg.j <= dim {
        AffineSubspace::from_ensemble(&ens0).ok()
    } else {
        None
    };

    let reference = if cfg.reference.enabled {
        Some(solve_reference(
            cfg,
            &problem,
            diag_cs.as_ref(),
            &mean0,
            sub.as_ref(),
        )?)
    } else {
        None
    };

    let checkpoints = cfg.checkpoint_times();
    let opts = DpOptions {
        rtol: cfg.rtol,
        atol: cfg.atol,
        h_init: None,
        h_max: None,
        max_steps: cfg.max_steps,
    };
    let trajectory = integrate_flow(&flow, &ens0, &checkpoints, &opts)?;

    let record = assemble_record(
        cfg,
        &flow,
        &trajectory,
        diag_cs.as_ref(),
        reference.as_ref(),
        sub.as_ref(),
        problem.obs_seed,
    )?;

    Ok(RunArtifacts {
        config: cfg.clone(),
        record,
        reference,
        truth: problem.truth,
        flow,
        trajectory,
        diag_constraints: diag_cs,
        c0: problem.c0,
        gamma: problem.gamma,
    })
}

fn assemble_record(
    cfg: &ExperimentConfig,
    flow: &FlowSpec,
    traj: &FlowTrajectory,
    diag_cs: Option<&ConstraintSet>,
    reference: Option<&ReferenceSolution>,
    sub: Option<&AffineSubspace>,
    obs_seed: Option<u64>,
) -> Result<TrajectoryRecord> {
    let pot = RegularizedPotential::new(flow.model.clone(), cfg.lambda)?;
    let ref_pair = match reference {
        Some(r) => {
            let u_ref = r.u_ref();
            let g_ref = flow.model.apply(&u_ref);
            Some((u_ref, g_ref))
        }
        None => None,
    };

    let mut rows = Vec::with_capacity(traj.times.len());
    for (t, ens) in traj.times.iter().zip(traj.ensembles.iter()) {
        let stats = flow.stats(ens)?;
        let mean = &stats.mean;
        let basis = span_basis(&stats.centered);
        let eta_min = if basis.ncols() == 0 {
            0.0
        } else {
            min_eigenvalue_on_span(&stats.cov, &basis).unwrap_or(0.0)
        };
        let (rho_t, _beta_t, tau_t) = flow.eval_schedules(*t);
        let margin = diag_cs.map(|cs| cs.feasibility_margin(mean));
        let phi_reg = pot.phi_reg(mean)?;
        // finite only while the mean is strictly feasible
        let phi_b = diag_cs.and_then(|cs| {
            let v = phi_reg + cs.barrier_value(mean, tau_t);
            v.is_finite().then_some(v)
        });
        let (err_param, err_obs) = match &ref_pair {
            Some((u_ref, g_ref)) => {
                let diff_obs = flow.model.apply(mean) - g_ref;
                (
                    Some((mean - u_ref).norm()),
                    Some(flow.model.noise_cov().quad(&diff_obs).sqrt()),
                )
            }
            None => (None, None),
        };
        let subspace_dist = match sub {
            Some(s) => {
                let d = subspace_distance(ens, s)?;
                let scale = ens
                    .particles()
                    .column_iter()
                    .map(|c| c.norm())
                    .fold(0.0, f64::max);
                d / (1.0 + scale)
            }
            None => 0.0,
        };
        rows.push(CheckpointRow {
            t: *t,
            v_e: stats.spread,
            eta_min,
            margin,
            phi_reg,
            phi_b,
            err_param,
            err_obs,
            subspace_dist,
            rho_t,
            tau_t,
        });
    }

    let final_mean = traj
        .ensembles
        .last()
        .map(|e| e.mean().as_slice().to_vec())
        .unwrap_or_default();
    let record = TrajectoryRecord {
        format_version: FORMAT_VERSION,
        config_hash: cfg.hash()?,
        variant: cfg.variant.as_str().to_string(),
        seeds: SeedSet {
            truth: cfg.truth_seed,
            noise: cfg.noise_seed,
            ensemble: cfg.ensemble_seed,
            observation_points: obs_seed,
        },
        reference_kind: reference.map(|r| r.kind).unwrap_or(ReferenceKind::None),
        subspace_reference: sub.is_some(),
        rows,
        counts: traj.counts,
        abort: traj.abort.clone(),
        final_mean,
    };
    record.validate()?;
    Ok(record)
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| EkiError::Config(e.to_string()))
}

/// Run and write all artifacts into `dir`. A failed run still leaves an
/// `abort.json` carrying the error text behind, then propagates the error.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunArtifacts> {
    std::fs::create_dir_all(dir)?;
    match run_experiment(cfg) {
        Err(e) => {
            let payload = serde_json::json!({ "error": e.to_string() });
            std::fs::write(dir.join("abort.json"), json_pretty(&payload)?)?;
            Err(e)
        }
        Ok(art) => {
            std::fs::write(dir.join("config.toml"), art.config.to_toml_string()?)?;
            std::fs::write(dir.join("record.csv"), art.record.to_csv_string())?;
            std::fs::write(dir.join("record.json"), art.record.to_json_string()?)?;
            if let Some(r) = &art.reference {
                std::fs::write(dir.join("reference.json"), json_pretty(r)?)?;
            }
            if let Some(abort) = &art.record.abort {
                std::fs::write(dir.join("abort.json"), json_pretty(abort)?)?;
            }
            Ok(art)
        }
    }
}
