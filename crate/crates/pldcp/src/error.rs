//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/tensor shape mismatch: `context` names the operation.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    /// A text format failed to parse; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Invalid configuration or argument.
    #[error("invalid config: {0}")]
    Config(String),

    /// Dataset-level semantic problem (empty domain, label out of range, ...).
    #[error("dataset error: {0}")]
    Data(String),

    /// A numeric invariant broke (non-finite value, divergence, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Checkpoint/config fingerprints disagree; both are printed in full.
    #[error("fingerprint mismatch: checkpoint {checkpoint}, requested {requested}")]
    Fingerprint {
        checkpoint: String,
        requested: String,
    },

    /// Refusal to clobber an existing output location.
    #[error("output path {0} already exists (pass --force to overwrite)")]
    OutputExists(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
