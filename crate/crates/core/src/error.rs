use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected} columns, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("fine-tuning diverged at step {step}: non-finite loss")]
    FineTuneDivergence { step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("predictor failed on batch {batch}: {message}")]
    Predictor { batch: usize, message: String },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{what} {index} out of range (valid: {valid})")]
    Range {
        what: &'static str,
        index: usize,
        valid: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
