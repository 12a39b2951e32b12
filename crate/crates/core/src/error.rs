//! Error types shared across the crate.

use crate::losses::LossReport;
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by geometry, training, scoring, and persistence.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Operands disagree on dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Operands disagree on curvature.
    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training aborted on a non-finite loss; the history up to the
    /// failing epoch is preserved for diagnosis.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged {
        epoch: usize,
        history: Vec<LossReport>,
    },

    /// A file failed structural validation.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for errors that indicate numerical divergence rather than a
    /// caller mistake; the CLI maps these to a distinct exit code.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::TrainingDiverged { .. }
        )
    }
}
