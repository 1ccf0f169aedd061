use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary file could not be decoded; `offset` is the byte where decoding failed.
    #[error("{path}: byte offset {offset}: {msg}")]
    Binary { path: PathBuf, offset: u64, msg: String },

    /// A text file could not be parsed; `line` is 1-based.
    #[error("{path}: line {line}: {msg}")]
    Text { path: PathBuf, line: usize, msg: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(what: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            what,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape { .. } => "shape",
            Error::Io { .. } => "io",
            Error::Binary { .. } => "binary-format",
            Error::Text { .. } => "text-format",
        }
    }
}
