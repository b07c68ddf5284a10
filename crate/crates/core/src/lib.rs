//! Continuous-time ensemble Kalman inversion with Tikhonov regularization,
//! covariance inflation, and log-barrier handling of convex inequality
//! constraints, plus the forward models, reference solvers, and diagnostics
//! used by the experiment runner.

pub mod constraints;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod forward_models;
pub mod integrator;
pub mod linalg;
pub mod potentials;
pub mod reference_solver;

pub use constraints::{BoxBounds, ConstraintSet, ConvexConstraint};
pub use dynamics::{FlowSpec, InflationSchedule, PenaltySchedule, Variant};
pub use ensemble::{compute_stats, AffineSubspace, Ensemble, EnsembleStats};
pub use error::{EkiError, Result};
pub use integrator::{integrate_flow, Abort, DpOptions, FlowTrajectory};
pub use linalg::Spd;
pub use potentials::{BarrierPotential, ForwardModel, RegularizedPotential};
pub use reference_solver::{
    kkt_residual, solve_barrier, solve_constrained, BarrierSolveResult, KKTReport,
};
