//! Named experiment configurations. Each preset exists at full scale (the
//! long-horizon settings) and at desk scale (minutes on a laptop), selected
//! by the `desk` flag.

use super::config::{
    ConstraintConfig, ConstraintKind, Darcy2dConfig, ExperimentConfig, Heat1dConfig,
    InflationConfig, InflationKind, ModelKind, OutputConfig, PenaltyConfig, PenaltyKind,
    PreProjectConfig, PriorConfig, ReferenceConfig, VariantKind,
};

/// Seeds shared by every preset so runs are reproducible across machines.
pub const TRUTH_SEED: u64 = 42;
pub const NOISE_SEED: u64 = 43;
pub const ENSEMBLE_SEED: u64 = 44;
pub const OBS_SEED: u64 = 53;

pub const PRESET_NAMES: [&str; 4] = [
    "pseudolinear",
    "pseudolinear-log",
    "darcy",
    "adaptive-tau",
];

fn base(model: ModelKind, variant: VariantKind, t_final: f64) -> ExperimentConfig {
    ExperimentConfig {
        model,
        variant,
        lambda: 0.01,
        gamma: 0.01,
        t_final,
        checkpoints: 120,
        rtol: 1e-6,
        atol: 1e-9,
        max_steps: 20_000_000,
        truth_seed: TRUTH_SEED,
        noise_seed: NOISE_SEED,
        ensemble_seed: ENSEMBLE_SEED,
        j: 10,
        heat1d: None,
        darcy2d: None,
        prior: PriorConfig::default(),
        constraints: ConstraintConfig::default(),
        inflation: InflationConfig::default(),
        penalty: PenaltyConfig::default(),
        pre_project: PreProjectConfig::default(),
        reference: ReferenceConfig::default(),
        output: OutputConfig::default(),
    }
}

/// 1d heat-source inversion with a prior-norm ball constraint: 99 unknowns,
/// 10 particles, fixed penalty 1e4, constant inflation 0.8.
pub fn pseudolinear(desk: bool) -> ExperimentConfig {
    let mut cfg = base(
        ModelKind::Heat1d,
        VariantKind::BarrierMean,
        if desk { 1e4 } else { 1e6 },
    );
    cfg.heat1d = Some(Heat1dConfig {
        dx: 0.01,
        dt: 0.05,
        eps: 0.1,
    });
    cfg.constraints = ConstraintConfig {
        kind: ConstraintKind::NormBall,
        ..ConstraintConfig::default()
    };
    cfg.inflation = InflationConfig {
        kind: InflationKind::Constant,
        rho0: 0.8,
        beta: 0.0,
    };
    cfg.penalty = PenaltyConfig {
        kind: PenaltyKind::Fixed,
        tau0: 1e4,
    };
    cfg
}

/// Same problem with the slowly increasing inflation schedule.
pub fn pseudolinear_log(desk: bool) -> ExperimentConfig {
    let mut cfg = pseudolinear(desk);
    cfg.inflation.kind = InflationKind::LogIncreasing;
    cfg
}

/// 2d log-diffusion inversion with box constraints derived from the truth:
/// n*n unknowns, 50 observation points, fixed penalty 1e4.
pub fn darcy(desk: bool) -> ExperimentConfig {
    let mut cfg = base(
        ModelKind::Darcy2d,
        VariantKind::BarrierMean,
        if desk { 1e3 } else { 1e6 },
    );
    cfg.darcy2d = Some(Darcy2dConfig {
        n: if desk { 8 } else { 32 },
        f: 1.0,
        k_obs: 50,
        obs_seed: OBS_SEED,
    });
    cfg.constraints = ConstraintConfig {
        kind: ConstraintKind::BoxFromTruth,
        slack: 0.3,
        ..ConstraintConfig::default()
    };
    cfg.inflation = InflationConfig {
        kind: InflationKind::Constant,
        rho0: 0.8,
        beta: 0.0,
    };
    cfg
}

/// Small Darcy instance for the penalty-schedule study: the returned config
/// uses the increasing schedule tau(t) = t + 1; fixed-penalty companions are
/// the same config with `penalty` switched to a fixed value.
pub fn adaptive_tau(desk: bool) -> ExperimentConfig {
    let mut cfg = base(
        ModelKind::Darcy2d,
        VariantKind::BarrierMean,
        if desk { 1e4 } else { 1e5 },
    );
    cfg.darcy2d = Some(Darcy2dConfig {
        n: 6,
        f: 1.0,
        k_obs: 50,
        obs_seed: OBS_SEED,
    });
    cfg.constraints = ConstraintConfig {
        kind: ConstraintKind::BoxFromTruth,
        slack: 0.2,
        ..ConstraintConfig::default()
    };
    cfg.inflation = InflationConfig {
        kind: InflationKind::Constant,
        rho0: 0.7,
        beta: 0.0,
    };
    cfg.penalty = PenaltyConfig {
        kind: PenaltyKind::Linear,
        tau0: 1e4,
    };
    cfg
}

pub fn by_name(name: &str, desk: bool) -> Option<ExperimentConfig> {
    match name {
        "pseudolinear" => Some(pseudolinear(desk)),
        "pseudolinear-log" => Some(pseudolinear_log(desk)),
        "darcy" => Some(darcy(desk)),
        "adaptive-tau" => Some(adaptive_tau(desk)),
        _ => None,
    }
}

/// One-line parameter summary per preset for the listing command.
pub fn describe(name: &str) -> Option<String> {
    let full = by_name(name, false)?;
    let desk = by_name(name, true)?;
    let dims = match full.model {
        ModelKind::Heat1d => "d=99".to_string(),
        ModelKind::Darcy2d => {
            let n = full.darcy2d.as_ref().map(|d| d.n).unwrap_or(0);
            format!("d={}", n * n)
        }
    };
    let penalty = match full.penalty.kind {
        PenaltyKind::Fixed => format!("tau={:.0e}", full.penalty.tau0),
        PenaltyKind::Linear => "tau(t)=t+1".to_string(),
    };
    let inflation = match full.inflation.kind {
        InflationKind::Off => "rho=0".to_string(),
        InflationKind::Constant => format!("rho={}", full.inflation.rho0),
        InflationKind::LogIncreasing => "rho=log-increasing".to_string(),
    };
    Some(format!(
        "{dims}, J={}, lambda={}, {penalty}, {inflation}, T={:.0e} (desk T={:.0e})",
        full.j, full.lambda, full.t_final, desk.t_final
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate_at_both_scales() {
        for name in PRESET_NAMES {
            for desk in [false, true] {
                let cfg = by_name(name, desk).unwrap();
                cfg.validate().unwrap();
                // presets round-trip through their own serialization
                let s = cfg.to_toml_string().unwrap();
                let back = ExperimentConfig::from_toml_str(&s).unwrap();
                assert_eq!(cfg, back, "{name} desk={desk}");
            }
        }
        assert!(by_name("unknown", true).is_none());
    }

    #[test]
    fn paper_scale_parameters() {
        let p = pseudolinear(false);
        assert_eq!(p.t_final, 1e6);
        assert_eq!(p.penalty.tau0, 1e4);
        assert_eq!(p.lambda, 0.01);
        assert_eq!(p.inflation.rho0, 0.8);
        let d = darcy(false);
        assert_eq!(d.darcy2d.unwrap().n, 32);
        assert_eq!(d.constraints.slack, 0.3);
        let a = adaptive_tau(false);
        assert_eq!(a.darcy2d.unwrap().n, 6);
        assert_eq!(a.t_final, 1e5);
        assert_eq!(a.inflation.rho0, 0.7);
        assert_eq!(a.penalty.kind, PenaltyKind::Linear);
    }

    #[test]
    fn descriptions_exist_for_all_names() {
        for name in PRESET_NAMES {
            let d = describe(name).unwrap();
            assert!(d.contains("J=10"), "{d}");
        }
    }
}
