use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A records line that is not valid JSON or does not match the schema.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Well-formed input that violates a record invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Cross-record or cross-file consistency failure.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Argument outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input for which the statistic is undefined, e.g. a single label class.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for configuration problems,
    /// 1 for everything else (validation, integrity, I/O, numerics).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}
