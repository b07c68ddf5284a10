//! Serialized run output: one row per accepted checkpoint plus run metadata.
//! Floats are written in Rust's shortest round-trip decimal form, so export
//! followed by re-import reproduces every value bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::integrator::{Abort, StepCounts};

/// Fixed, versioned column order of `record.csv`.
pub const CSV_HEADER: &str =
    "t,V_e,eta_min,margin,phi_reg,phi_b,err_param,err_obs,subspace_dist,rho_t,tau_t";

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub t: f64,
    /// Ensemble spread `V_e = tr(Chat) / 2`.
    pub v_e: f64,
    /// Smallest covariance eigenvalue restricted to the ensemble span.
    pub eta_min: f64,
    /// `max_i h_i(mean)`; absent when the run has no constraint set.
    pub margin: Option<f64>,
    pub phi_reg: f64,
    /// Barrier-augmented value at the mean; absent when the mean is outside
    /// the feasible set (the value would be the infinite sentinel).
    pub phi_b: Option<f64>,
    /// `|| mean - u_ref ||`; absent when no reference was solved.
    pub err_param: Option<f64>,
    /// Noise-weighted observation error `|| G(mean) - G(u_ref) ||_Gamma`.
    pub err_obs: Option<f64>,
    /// Largest particle distance from the initial affine span, relative to
    /// the particle scale.
    pub subspace_dist: f64,
    pub rho_t: f64,
    pub tau_t: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub truth: u64,
    pub noise: u64,
    pub ensemble: u64,
    pub observation_points: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Barrier minimizer at the run's fixed penalty.
    FixedPenalty,
    /// Constrained minimizer from the full continuation ladder.
    Constrained,
    /// Unconstrained minimizer of the regularized potential.
    Unconstrained,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub format_version: u32,
    pub config_hash: String,
    pub variant: String,
    pub seeds: SeedSet,
    pub reference_kind: ReferenceKind,
    /// Whether the reference solve was restricted to the initial ensemble
    /// span.
    pub subspace_reference: bool,
    pub rows: Vec<CheckpointRow>,
    pub counts: StepCounts,
    pub abort: Option<Abort>,
    pub final_mean: Vec<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

fn parse_f64(s: &str, line: usize, col: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| {
        EkiError::Config(format!("record.csv line {line}: bad {col} value {s:?}"))
    })
}

fn parse_opt(s: &str, line: usize, col: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, line, col).map(Some)
    }
}

impl CheckpointRow {
    fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.v_e,
            self.eta_min,
            fmt_opt(self.margin),
            self.phi_reg,
            fmt_opt(self.phi_b),
            fmt_opt(self.err_param),
            fmt_opt(self.err_obs),
            self.subspace_dist,
            self.rho_t,
            self.tau_t
        )
    }

    fn from_csv_line(s: &str, line: usize) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 11 {
            return Err(EkiError::Config(format!(
                "record.csv line {line}: expected 11 columns, got {}",
                parts.len()
            )));
        }
        Ok(CheckpointRow {
            t: parse_f64(parts[0], line, "t")?,
            v_e: parse_f64(parts[1], line, "V_e")?,
            eta_min: parse_f64(parts[2], line, "eta_min")?,
            margin: parse_opt(parts[3], line, "margin")?,
            phi_reg: parse_f64(parts[4], line, "phi_reg")?,
            phi_b: parse_opt(parts[5], line, "phi_b")?,
            err_param: parse_opt(parts[6], line, "err_param")?,
            err_obs: parse_opt(parts[7], line, "err_obs")?,
            subspace_dist: parse_f64(parts[8], line, "subspace_dist")?,
            rho_t: parse_f64(parts[9], line, "rho_t")?,
            tau_t: parse_f64(parts[10], line, "tau_t")?,
        })
    }
}

impl TrajectoryRecord {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_csv_line());
            out.push('\n');
        }
        out
    }

    pub fn rows_from_csv_str(s: &str) -> Result<Vec<CheckpointRow>> {
        let mut lines = s.lines();
        match lines.next() {
            Some(h) if h == CSV_HEADER => {}
            Some(h) => {
                return Err(EkiError::Config(format!(
                    "record.csv: unrecognized header {h:?}"
                )))
            }
            None => return Err(EkiError::Config("record.csv: empty file".into())),
        }
        lines
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| CheckpointRow::from_csv_line(l, i + 2))
            .collect()
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| EkiError::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| EkiError::Config(e.to_string()))
    }

    /// Checkpoint times strictly increase and everything recorded is finite;
    /// aborted runs are exempt from the final-row check since the abort row
    /// reports whatever state the integrator stopped in.
    pub fn validate(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(EkiError::InvalidInput(format!(
                    "record times not strictly increasing at t = {}",
                    w[1].t
                )));
            }
        }
        let check_rows = if self.abort.is_some() && !self.rows.is_empty() {
            &self.rows[..self.rows.len() - 1]
        } else {
            &self.rows[..]
        };
        for row in check_rows {
            let finite = row.t.is_finite()
                && row.v_e.is_finite()
                && row.eta_min.is_finite()
                && row.phi_reg.is_finite()
                && row.subspace_dist.is_finite()
                && row.rho_t.is_finite()
                && row.tau_t.is_finite()
                && row.margin.map_or(true, f64::is_finite)
                && row.phi_b.map_or(true, f64::is_finite)
                && row.err_param.map_or(true, f64::is_finite)
                && row.err_obs.map_or(true, f64::is_finite);
            if !finite {
                return Err(EkiError::InvalidInput(format!(
                    "non-finite record entry at t = {}",
                    row.t
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> TrajectoryRecord {
        let rows = (0..5)
            .map(|i| {
                let t = if i == 0 { 0.0 } else { 10f64.powi(i - 3) };
                CheckpointRow {
                    t,
                    v_e: 1.0 / (1.0 + t) * 0.123456789,
                    eta_min: 1e-3 / (1.0 + t),
                    margin: Some(-0.25 + 1e-3 * i as f64),
                    phi_reg: 2.0 + (i as f64).sin(),
                    phi_b: if i == 4 { None } else { Some(2.5 + i as f64 * 0.1) },
                    err_param: Some(0.5 / (1.0 + t)),
                    err_obs: Some(0.25 / (1.0 + t)),
                    subspace_dist: 1e-14 * i as f64,
                    rho_t: 0.8,
                    tau_t: 1e4,
                }
            })
            .collect();
        TrajectoryRecord {
            format_version: FORMAT_VERSION,
            config_hash: "deadbeef".into(),
            variant: "barrier-mean".into(),
            seeds: SeedSet {
                truth: 1,
                noise: 2,
                ensemble: 3,
                observation_points: None,
            },
            reference_kind: ReferenceKind::FixedPenalty,
            subspace_reference: true,
            rows,
            counts: StepCounts {
                accepted: 321,
                rejected_error: 12,
                rejected_feasibility: 1,
            },
            abort: None,
            final_mean: vec![0.1, -0.2, 0.3000000000000004],
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let rec = sample_record();
        let csv = rec.to_csv_string();
        let rows = TrajectoryRecord::rows_from_csv_str(&csv).unwrap();
        assert_eq!(rows.len(), rec.rows.len());
        for (a, b) in rows.iter().zip(&rec.rows) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.v_e.to_bits(), b.v_e.to_bits());
            assert_eq!(a.margin.map(f64::to_bits), b.margin.map(f64::to_bits));
            assert_eq!(a.phi_b.map(f64::to_bits), b.phi_b.map(f64::to_bits));
            assert_eq!(a.tau_t.to_bits(), b.tau_t.to_bits());
        }
        assert_eq!(rows, rec.rows);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let rec = sample_record();
        let json = rec.to_json_string().unwrap();
        let back = TrajectoryRecord::from_json_str(&json).unwrap();
        assert_eq!(back, rec);
        assert_eq!(
            back.final_mean[2].to_bits(),
            rec.final_mean[2].to_bits()
        );
    }

    #[test]
    fn csv_header_is_the_versioned_column_order() {
        let csv = sample_record().to_csv_string();
        assert!(csv.starts_with(
            "t,V_e,eta_min,margin,phi_reg,phi_b,err_param,err_obs,subspace_dist,rho_t,tau_t\n"
        ));
    }

    #[test]
    fn bad_csv_inputs_are_rejected() {
        assert!(TrajectoryRecord::rows_from_csv_str("").is_err());
        assert!(TrajectoryRecord::rows_from_csv_str("a,b\n").is_err());
        let good = sample_record().to_csv_string();
        let mangled = good.replace("0.8,", "zero point eight,");
        assert!(TrajectoryRecord::rows_from_csv_str(&mangled).is_err());
    }

    #[test]
    fn validation_catches_non_increasing_times_and_non_finite_values() {
        let mut rec = sample_record();
        rec.validate().unwrap();
        rec.rows[2].t = rec.rows[1].t;
        assert!(rec.validate().is_err());
        let mut rec = sample_record();
        rec.rows[1].phi_reg = f64::INFINITY;
        assert!(rec.validate().is_err());
        // an aborted run may end in a non-finite diagnostic row
        let mut rec = sample_record();
        let last = rec.rows.len() - 1;
        rec.rows[last].v_e = f64::INFINITY;
        rec.abort = Some(Abort::Divergence { t: 1.0, norm: 1e13 });
        rec.validate().unwrap();
    }
}
