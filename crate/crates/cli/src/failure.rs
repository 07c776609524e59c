use std::fmt;

use sbp_core::Error;

/// A command failure and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Diverged(String),
    Internal(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Diverged(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Diverged(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Domain(_) | Error::Shape(_) | Error::UnsupportedPattern(_) => Failure::Config(msg),
            Error::Idx { .. } | Error::Data(_) | Error::Checkpoint(_) | Error::Io { .. } => Failure::Data(msg),
            Error::Numeric(_) => Failure::Diverged(msg),
            Error::State(_) => Failure::Internal(msg),
        }
    }
}

/// Attaches a file to I/O failures on artifacts being written.
pub fn write_failure(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure::Internal(format!("cannot write {}: {e}", path.display()))
}
