use thiserror::Error;

/// Error type shared by every module in the crate.
///
/// Numerical routines distinguish recoverable conditions (a rejected step, a
/// point too close to the feasible boundary) from hard input errors so that
/// callers such as the integrator can react to the former without aborting.
#[derive(Error, Debug)]
pub enum EkiError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("box bounds invalid at component {index}: lower {lower} >= upper {upper}")]
    InvalidBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("ensemble span is degenerate: {0}")]
    DegenerateSpan(String),

    #[error(
        "point is within the strict-feasibility margin of constraint {index} (h = {value:.3e})"
    )]
    FeasibilityMargin { index: usize, value: f64 },

    #[error("constraint violated at index {index}: h = {value:.3e} >= 0")]
    Infeasible { index: usize, value: f64 },

    #[error("forward model provides no Jacobian; operation unsupported")]
    JacobianUnavailable,

    #[error("initial state infeasible: {0}")]
    InfeasibleStart(String),

    #[error("line search failed after {halvings} halvings at iteration {iter}")]
    LineSearchFailure { iter: usize, halvings: usize },

    #[error("continuation ladder failed at stage {stage} (tau = {tau:.3e}): {source}")]
    LadderStage {
        stage: usize,
        tau: f64,
        #[source]
        source: Box<EkiError>,
    },

    #[error("rate estimate undefined: {0}")]
    UndefinedRate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EkiError>;
