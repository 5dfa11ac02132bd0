//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation
    /// (negative time, non-positive Yosida parameter, t before the anchor, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimensions of vectors, matrices or index ranges do not agree.
    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// A non-finite value appeared during a simulation or solve.
    #[error("numeric error at step {step}, path {path}: {msg}")]
    Numeric { step: usize, path: usize, msg: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Configuration violates a stability or schema requirement.
    #[error("configuration error at {path}: {msg}")]
    Config { path: String, msg: String },

    /// A candidate solution lacks the derivatives an operation needs.
    #[error("capability error: {0}")]
    Capability(String),

    /// A verified precondition (touching point, near-optimal start) failed.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("replay drift: {0}")]
    Drift(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: usize, got: usize) -> Self {
        Error::Shape { expected, got }
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::shape(expected, got))
    }
}
