use thiserror::Error;

use crate::Vector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid norm: {0}")]
    InvalidNorm(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty point set")]
    EmptySet,

    #[error("selection is not in H(x): membership distance {distance:e}")]
    MembershipViolation { distance: f64 },

    #[error("injected error of norm {norm:e} exceeds the bound {bound:e} at step {step}")]
    ErrorBoundViolation { step: usize, norm: f64, bound: f64 },

    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize, last_finite: Vector },

    #[error("horizon too short: distance {distance:e} to the attractor at the horizon exceeds {tolerance:e}")]
    HorizonTooShort { distance: f64, tolerance: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("step schedule: {0}")]
    Schedule(String),

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("linear system is singular")]
    Singular,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
