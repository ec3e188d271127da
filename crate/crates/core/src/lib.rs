//! Stochastic approximation algorithms whose mean field is a set-valued map.
//!
//! The crate is organised bottom-up:
//!
//! * [`norms`] weighted norms, norm-induced metrics and Hausdorff distances.
//! * [`dynamics`] set-valued (Marchaud) maps, selections, Euler solutions of
//!   `ẋ ∈ H(x)`, numerically constructed Lyapunov functions and inward
//!   directing set pairs.
//! * [`saa`] the iterate `x_{n+1} = x_n + a(n)[y_n + M_{n+1}]`, its projective
//!   partner, coupled runs and trajectory diagnostics.
//! * [`mdp`] tabular MDPs, the Bellman operator and stochastic approximate
//!   value iteration.
//! * [`fixed_point`] stochastic approximation of fixed points of contractive
//!   set-valued maps, plus the generic boundedness comparison.
//!
//! Vectors are `nalgebra::DVector<f64>` throughout.

pub mod dynamics;
pub mod error;
pub mod fixed_point;
pub mod mdp;
pub mod norms;
pub mod saa;

mod hull;
mod rng;

pub use error::{Error, Result};

/// Column vector in `ℝ^d`.
pub type Vector = nalgebra::DVector<f64>;

/// Iterates whose Euclidean norm exceeds this value are reported as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
