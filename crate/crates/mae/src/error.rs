//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("joint {joint} at {value} rad outside limits [{min}, {max}]")]
    JointLimit {
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("muscle {muscle} has negative tension {value} N")]
    NegativeTension { muscle: usize, value: f64 },

    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("equilibrium solver failed after {iterations} iterations, residual {residual} N*mm")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("non-finite loss during {context}")]
    NonFiniteLoss { context: &'static str },

    #[error("online buffer not ready: {have} samples, {need} required")]
    BufferNotReady { have: usize, need: usize },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
