//! Crate-wide error type with a stable mapping to CLI exit codes.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments or values that violate an operation's contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Zero-norm (or effectively zero) vector where a direction is required.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A loaded artifact violates its schema invariants.
    #[error("validation failed: {0}")]
    Validation(String),

    /// Two artifacts disagree on embedding dimension or class set.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Non-finite values inside an embedding blob.
    #[error("corrupt data in {path}: non-finite value at frame {frame}")]
    CorruptData { path: PathBuf, frame: usize },

    /// An embedding blob whose byte length disagrees with the manifest.
    #[error("size mismatch for {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    /// A serialized artifact carries an unsupported format tag.
    #[error("unsupported format {found:?} (expected {expected:?})")]
    VersionMismatch { expected: String, found: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    MalformedJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed config in {path}: {message}")]
    MalformedConfig { path: PathBuf, message: String },

    /// A bug: an internal invariant was breached.
    #[error("internal invariant breached: {0}")]
    Internal(String),
}

impl Error {
    /// Exit code contract: 1 validation, 2 I/O, 3 internal invariant breach.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Internal(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
