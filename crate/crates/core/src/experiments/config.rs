//! Run configuration: a TOML file fully determines an experiment. Unknown
//! keys are rejected so a config cannot silently drift from the code.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EkiError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Heat1d,
    Darcy2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Plain,
    Tikhonov,
    BarrierMean,
    BarrierParticle,
}

impl VariantKind {
    pub fn is_barrier(self) -> bool {
        matches!(self, VariantKind::BarrierMean | VariantKind::BarrierParticle)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Plain => "plain",
            VariantKind::Tikhonov => "tikhonov",
            VariantKind::BarrierMean => "barrier-mean",
            VariantKind::BarrierParticle => "barrier-particle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heat1dConfig {
    #[serde(default = "d_dx")]
    pub dx: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
}

impl Default for Heat1dConfig {
    fn default() -> Self {
        Heat1dConfig {
            dx: d_dx(),
            dt: d_dt(),
            eps: d_eps(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Darcy2dConfig {
    /// Nodes per side; the parameter dimension is `n * n`.
    #[serde(default = "d_n")]
    pub n: usize,
    /// Constant source term of the pressure equation.
    #[serde(default = "d_one")]
    pub f: f64,
    /// Number of random interior observation points.
    #[serde(default = "d_k_obs")]
    pub k_obs: usize,
    /// Seed for the observation-point locations.
    #[serde(default = "d_obs_seed")]
    pub obs_seed: u64,
}

impl Default for Darcy2dConfig {
    fn default() -> Self {
        Darcy2dConfig {
            n: d_n(),
            f: d_one(),
            k_obs: d_k_obs(),
            obs_seed: d_obs_seed(),
        }
    }
}

/// Prior parameters; the 1d fields apply to the heat model, the 2d fields to
/// the Darcy model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "d_sigma2")]
    pub sigma2: f64,
    #[serde(default = "d_length_scale")]
    pub length_scale: f64,
    /// Truncation of the 1d expansion.
    #[serde(default = "d_truncation")]
    pub truncation: usize,
    #[serde(default = "d_tau_prior")]
    pub tau_prior: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// Number of retained 2d modes.
    #[serde(default = "d_terms")]
    pub terms: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            sigma2: d_sigma2(),
            length_scale: d_length_scale(),
            truncation: d_truncation(),
            tau_prior: d_tau_prior(),
            alpha: d_alpha(),
            terms: d_terms(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    None,
    Box,
    BoxFromTruth,
    NormBall,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub kind: ConstraintKind,
    /// Uniform bounds for `kind = "box"`.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Inward slack for `kind = "box-from-truth"`.
    #[serde(default = "d_slack")]
    pub slack: f64,
    /// For `kind = "norm-ball"`: the ball radius is this factor times the
    /// truth's squared prior norm `0.5 <u_truth, C0^{-1} u_truth>`, so a
    /// factor below one puts the truth outside the feasible set.
    #[serde(default = "d_radius_factor")]
    pub radius_factor: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            kind: ConstraintKind::None,
            lower: None,
            upper: None,
            slack: d_slack(),
            radius_factor: d_radius_factor(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InflationKind {
    Off,
    Constant,
    LogIncreasing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationConfig {
    pub kind: InflationKind,
    #[serde(default = "d_rho0")]
    pub rho0: f64,
    /// Strength of the inflation term paired with the regularization drift.
    #[serde(default)]
    pub beta: f64,
}

impl Default for InflationConfig {
    fn default() -> Self {
        InflationConfig {
            kind: InflationKind::Off,
            rho0: d_rho0(),
            beta: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    Fixed,
    /// `tau(t) = t + 1`; `tau0` is ignored.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    #[serde(default = "d_tau0")]
    pub tau0: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            kind: PenaltyKind::Fixed,
            tau0: d_tau0(),
        }
    }
}

/// How an initial ensemble drawn from the prior is pulled into the feasible
/// set: project (box) or rescale (norm ball), then move each particle a
/// `shrink` fraction toward the constraint center so it ends strictly
/// interior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreProjectConfig {
    #[serde(default = "d_true")]
    pub enabled: bool,
    #[serde(default = "d_shrink")]
    pub shrink: f64,
}

impl Default for PreProjectConfig {
    fn default() -> Self {
        PreProjectConfig {
            enabled: true,
            shrink: d_shrink(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "d_true")]
    pub enabled: bool,
    #[serde(default = "d_tol_grad")]
    pub tol_grad: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            enabled: true,
            tol_grad: d_tol_grad(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub variant: VariantKind,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    /// Observation-noise variance; the noise covariance is this times the
    /// identity.
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    pub t_final: f64,
    /// Number of log-spaced checkpoints after t = 0.
    #[serde(default = "d_checkpoints")]
    pub checkpoints: usize,
    #[serde(default = "d_rtol")]
    pub rtol: f64,
    #[serde(default = "d_atol")]
    pub atol: f64,
    #[serde(default = "d_max_steps")]
    pub max_steps: usize,
    pub truth_seed: u64,
    pub noise_seed: u64,
    pub ensemble_seed: u64,
    #[serde(default = "d_j")]
    pub j: usize,
    #[serde(default)]
    pub heat1d: Option<Heat1dConfig>,
    #[serde(default)]
    pub darcy2d: Option<Darcy2dConfig>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub constraints: ConstraintConfig,
    #[serde(default)]
    pub inflation: InflationConfig,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub pre_project: PreProjectConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn d_dx() -> f64 {
    0.01
}
fn d_dt() -> f64 {
    0.05
}
fn d_eps() -> f64 {
    0.1
}
fn d_n() -> usize {
    8
}
fn d_one() -> f64 {
    1.0
}
fn d_k_obs() -> usize {
    50
}
fn d_obs_seed() -> u64 {
    53
}
fn d_sigma2() -> f64 {
    10.0
}
fn d_length_scale() -> f64 {
    0.1
}
fn d_truncation() -> usize {
    12
}
fn d_tau_prior() -> f64 {
    0.01
}
fn d_alpha() -> f64 {
    2.0
}
fn d_terms() -> usize {
    25
}
fn d_slack() -> f64 {
    0.3
}
fn d_radius_factor() -> f64 {
    0.9
}
fn d_rho0() -> f64 {
    0.8
}
fn d_tau0() -> f64 {
    1e4
}
fn d_true() -> bool {
    true
}
fn d_shrink() -> f64 {
    0.05
}
fn d_tol_grad() -> f64 {
    1e-8
}
fn d_lambda() -> f64 {
    0.01
}
fn d_gamma() -> f64 {
    0.01
}
fn d_checkpoints() -> usize {
    120
}
fn d_rtol() -> f64 {
    1e-6
}
fn d_atol() -> f64 {
    1e-9
}
fn d_max_steps() -> usize {
    20_000_000
}
fn d_j() -> usize {
    10
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(s).map_err(|e| EkiError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| EkiError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match self.model {
            ModelKind::Heat1d => {
                if self.darcy2d.is_some() {
                    return Err(EkiError::Config(
                        "model = \"heat1d\" conflicts with a [darcy2d] table".into(),
                    ));
                }
            }
            ModelKind::Darcy2d => {
                if self.heat1d.is_some() {
                    return Err(EkiError::Config(
                        "model = \"darcy2d\" conflicts with a [heat1d] table".into(),
                    ));
                }
            }
        }
        if self.j < 2 {
            return Err(EkiError::Config(format!(
                "ensemble size must be at least 2, got {}",
                self.j
            )));
        }
        if !(self.t_final > 0.0) {
            return Err(EkiError::Config(format!(
                "t_final must be positive, got {}",
                self.t_final
            )));
        }
        if self.checkpoints < 2 {
            return Err(EkiError::Config(format!(
                "need at least 2 checkpoints, got {}",
                self.checkpoints
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(EkiError::Config(format!(
                "noise variance must be positive, got {}",
                self.gamma
            )));
        }
        if self.variant.is_barrier() && self.constraints.kind == ConstraintKind::None {
            return Err(EkiError::Config(
                "barrier variants need a constraint set (constraints.kind)".into(),
            ));
        }
        if self.constraints.kind == ConstraintKind::Box
            && (self.constraints.lower.is_none() || self.constraints.upper.is_none())
        {
            return Err(EkiError::Config(
                "constraints.kind = \"box\" needs lower and upper".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.pre_project.shrink) {
            return Err(EkiError::Config(format!(
                "pre_project.shrink must be in [0, 1), got {}",
                self.pre_project.shrink
            )));
        }
        Ok(())
    }

    /// Hex digest of the canonical serialized form; embedded in every output
    /// so a record can be traced back to the exact configuration.
    pub fn hash(&self) -> Result<String> {
        let canonical = self.to_toml_string()?;
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        Ok(format!("{:x}", h.finalize()))
    }

    /// Log-spaced checkpoint times starting at 0, spanning six decades up to
    /// `t_final`.
    pub fn checkpoint_times(&self) -> Vec<f64> {
        let n = self.checkpoints;
        let t_max = self.t_final;
        let t_min = t_max * 1e-6;
        let mut ts = Vec::with_capacity(n + 1);
        ts.push(0.0);
        let lg0 = t_min.ln();
        let lg1 = t_max.ln();
        for i in 0..n {
            let f = i as f64 / (n - 1) as f64;
            ts.push((lg0 + f * (lg1 - lg0)).exp());
        }
        // exact landing at the final time, immune to round-off in the ramp
        let last = ts.len() - 1;
        ts[last] = t_max;
        ts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"
model = "heat1d"
variant = "tikhonov"
t_final = 100.0
truth_seed = 1
noise_seed = 2
ensemble_seed = 3
"#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(minimal()).unwrap();
        assert_eq!(cfg.j, 10);
        assert_eq!(cfg.lambda, 0.01);
        assert_eq!(cfg.prior.sigma2, 10.0);
        assert_eq!(cfg.constraints.kind, ConstraintKind::None);
        assert!(cfg.pre_project.enabled);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let s = format!("{}\nbogus_key = 1\n", minimal());
        assert!(matches!(
            ExperimentConfig::from_toml_str(&s),
            Err(EkiError::Config(_))
        ));
        let s = format!("{}\n[inflation]\nkind = \"constant\"\nrho_typo = 0.5\n", minimal());
        assert!(ExperimentConfig::from_toml_str(&s).is_err());
    }

    #[test]
    fn barrier_without_constraints_is_rejected() {
        let s = minimal().replace("tikhonov", "barrier-mean");
        assert!(ExperimentConfig::from_toml_str(&s).is_err());
        let s = format!("{}\n[constraints]\nkind = \"norm-ball\"\n", s);
        assert!(ExperimentConfig::from_toml_str(&s).is_ok());
    }

    #[test]
    fn wrong_model_table_is_rejected() {
        let s = format!("{}\n[darcy2d]\nn = 8\n", minimal());
        assert!(ExperimentConfig::from_toml_str(&s).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_toml_str(minimal()).unwrap();
        let b = ExperimentConfig::from_toml_str(minimal()).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let mut c = a.clone();
        c.lambda = 0.02;
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let a = ExperimentConfig::from_toml_str(minimal()).unwrap();
        let s = a.to_toml_string().unwrap();
        let b = ExperimentConfig::from_toml_str(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoints_start_at_zero_and_end_exactly_at_t_final() {
        let cfg = ExperimentConfig::from_toml_str(minimal()).unwrap();
        let ts = cfg.checkpoint_times();
        assert_eq!(ts[0], 0.0);
        assert_eq!(*ts.last().unwrap(), 100.0);
        assert_eq!(ts.len(), cfg.checkpoints + 1);
        for w in ts.windows(2) {
            assert!(w[1] > w[0]);
        }
    }
}
