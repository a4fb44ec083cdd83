use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("training diverged at epoch {epoch} (global step {step}): {what} is not finite")]
    Divergence {
        epoch: usize,
        step: usize,
        what: &'static str,
    },

    #[error(
        "teacher did not reach macro-F1 floor {floor:.3} within {steps} steps (final F1 {f1:.4})"
    )]
    TeacherUnderfit { f1: f64, floor: f64, steps: usize },

    #[error("teacher is frozen; parameter updates are rejected")]
    FrozenTeacher,

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
