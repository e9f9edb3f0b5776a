//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter dimensions do not line up.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Operation undefined for the given input (empty range, empty set, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed external file (IDX, record file, checkpoint).
    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(context: impl ToString, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            context: context.to_string(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn io(path: impl ToString, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }

    pub fn format(path: impl ToString, offset: u64, message: impl ToString) -> Self {
        Error::Format {
            path: path.to_string(),
            offset,
            message: message.to_string(),
        }
    }
}
