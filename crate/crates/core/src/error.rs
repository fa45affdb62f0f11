use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    Range { what: &'static str, value: String, lo: String, hi: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("{0}")]
    Domain(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing {0}")]
    Missing(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn range(what: &'static str, value: impl ToString, lo: impl ToString, hi: impl ToString) -> Self {
        Error::Range { what, value: value.to_string(), lo: lo.to_string(), hi: hi.to_string() }
    }

    /// True for failures caused by bad input data rather than misuse.
    pub fn is_data(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Range { .. } | Error::Io { .. } | Error::Missing(_))
    }
}
