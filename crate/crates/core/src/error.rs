use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate sentence id {0:?}")]
    DuplicateId(String),

    #[error("sentence {id:?}: {message}")]
    InvalidTree { id: String, message: String },

    #[error("invalid edit: {0}")]
    InvalidEdit(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("scorer has no value for {0:?}")]
    MissingScore(String),

    #[error("backend: {0}")]
    Backend(String),

    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in a remote backend rather than in
    /// the data handed to the pipeline.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_) | Error::Status { .. })
    }
}
