use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario, network or run configuration failed validation.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown {kind} id {id}")]
    Lookup { kind: &'static str, id: usize },

    #[error("illegal action {action} submitted for agent {agent}")]
    IllegalAction { agent: usize, action: String },

    #[error("shape error: {0}")]
    Shape(String),

    /// A caller broke an operation's precondition (e.g. softmax over an empty mask).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training produced NaN or infinite values.
    #[error("numerical divergence: {0}")]
    Diverged(String),

    /// Every seed of a campaign failed.
    #[error("campaign failed: {0}")]
    Campaign(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    /// Process exit code for the CLI: 1 for validation-type failures, 2 for runtime faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Lookup { .. }
            | Error::IllegalAction { .. }
            | Error::Validation(_)
            | Error::Parse { .. } => 1,
            _ => 2,
        }
    }
}
