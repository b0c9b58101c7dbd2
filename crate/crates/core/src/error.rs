use std::io;

use thiserror::Error;

use crate::optim::TrainingTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed run {run_id}: {reason}")]
    MalformedRun { run_id: String, reason: String },

    #[error("malformed profile: {0}")]
    MalformedProfile(String),

    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The error or gradient became non-finite. `last_good` holds the
    /// parameters of the last accepted step in canonical order.
    #[error("numeric failure at cycle {cycle}: {reason}")]
    NumericFailure {
        cycle: usize,
        reason: String,
        last_good: Vec<f64>,
        trace: TrainingTrace,
    },

    #[error("training diverged at epoch {epoch}: error {error:e}")]
    Divergence {
        epoch: usize,
        error: f64,
        trace: TrainingTrace,
    },

    #[error("series length mismatch: {0}")]
    LengthMismatch(String),

    #[error("unsupported format version: {0}")]
    UnsupportedVersion(String),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("checksum mismatch")]
    Checksum,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn malformed(run_id: &str, reason: impl Into<String>) -> Self {
        Error::MalformedRun {
            run_id: run_id.to_string(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the numbers themselves rather than by the
    /// shape or syntax of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericFailure { .. } | Error::Divergence { .. } | Error::NonFinite(_)
        )
    }

    /// Training trace up to the failure, for numeric training errors.
    pub fn trace(&self) -> Option<&TrainingTrace> {
        match self {
            Error::NumericFailure { trace, .. } | Error::Divergence { trace, .. } => Some(trace),
            _ => None,
        }
    }
}
