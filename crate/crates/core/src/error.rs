//! Error type shared across the crate.

use thiserror::Error;

/// Failures surfaced by mesh construction, table building, coefficient
/// evaluation, and integration.
///
/// Domain violations on pure coefficient functions (negative step ratios and
/// the like) report as [`Error::InvalidArgument`], matching the mesh and
/// table constructors, so callers handle one error type throughout.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported BDF order {0}; supported orders are 1, 2 and 3")]
    UnsupportedOrder(usize),

    #[error("ratio cap {cap} not satisfied after {budget} full-mesh redraws")]
    CapUnsatisfiable { cap: f64, budget: usize },

    #[error("tables were built over different meshes: {0}")]
    MeshMismatch(String),

    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error(
        "Newton iteration did not converge at step {step} \
         ({iterations} iterations, last update {last_update:.3e})"
    )]
    NewtonDivergence {
        step: usize,
        iterations: usize,
        last_update: f64,
    },

    #[error("singular Newton matrix at step {step}")]
    SingularJacobian { step: usize },

    #[error("starter failed at step {step}: {reason}")]
    StarterFailure { step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
