use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TlaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TlaError {
    /// Operand shapes are incompatible.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An argument lies outside the operation's domain (empty input, zero length, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an API contract (non-scalar loss, unbound tape, ...).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric divergence at step {step}: {message}")]
    Numeric { step: usize, message: String },

    #[error("augmentation failed for {} example(s): {}", failed_ids.len(), failed_ids.join(", "))]
    Augmentation { failed_ids: Vec<String> },

    #[error("transport error: {0}")]
    Transport(String),

    /// Artifacts that cannot be used together (vocabulary hash, container version).
    #[error("incompatible artifact: {0}")]
    Incompatible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TlaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TlaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        TlaError::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        TlaError::Domain(msg.into())
    }
}

/// Process exit status for a failed command.
pub fn exit_code(e: &TlaError) -> i32 {
    match e {
        TlaError::Config(_) | TlaError::Parse { .. } | TlaError::Io { .. } | TlaError::Json(_) => 2,
        TlaError::Numeric { .. } => 3,
        TlaError::Incompatible(_) | TlaError::Format(_) => 4,
        _ => 1,
    }
}
