use std::path::PathBuf;

use crate::truncmath::DomainError;

/// Errors surfaced by the library. Each variant maps to one failure class so
/// callers (the CLI in particular) can pick an exit status without parsing
/// messages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("unsupported pattern: {0}")]
    UnsupportedPattern(String),
    #[error("malformed IDX file {path}: {msg} (at byte {offset})")]
    Idx { path: PathBuf, offset: u64, msg: String },
    #[error("dataset error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
