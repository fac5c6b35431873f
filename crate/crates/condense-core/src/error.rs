//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on dimension, or a requested dimension is
    /// impossible (e.g. target dim larger than source dim).
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file does not conform to its declared format. `line` is set for
    /// text formats.
    #[error("format error{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Format { msg: String, line: Option<usize> },

    /// An invalid configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    /// Negative sampling found no irrelevant candidate for a query.
    #[error("no irrelevant candidate in top docs for query {0}")]
    NoNegative(String),

    /// A lookup key (query id, doc id) is absent.
    #[error("unknown key: {0}")]
    MissingKey(String),
}

impl Error {
    pub(crate) fn dimension(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format {
            msg: msg.into(),
            line: None,
        }
    }

    pub(crate) fn format_at(msg: impl Into<String>, line: usize) -> Self {
        Error::Format {
            msg: msg.into(),
            line: Some(line),
        }
    }
}
