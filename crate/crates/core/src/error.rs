use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed audio file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    RateMismatch { expected: f64, found: f64 },

    #[error("unsupported sample rate {0} Hz")]
    UnsupportedRate(f64),

    #[error("range error: {0}")]
    Range(String),

    #[error("invalid argument `{arg}`: {reason}")]
    Argument { arg: &'static str, reason: String },

    #[error("sequence too short: need more than {needed} samples, got {got}")]
    Length { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("infeasible scenario: {0}")]
    Scenario(String),

    #[error("model file error: {0}")]
    Model(String),

    #[error("manifest error: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn arg(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::Argument {
            arg,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by missing or unreadable inputs (as opposed to
    /// bad configuration or values that fail validation).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Format { .. } | Error::Parse { .. } | Error::Model(_) | Error::Manifest(_)
        )
    }
}
