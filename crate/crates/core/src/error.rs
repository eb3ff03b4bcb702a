use thiserror::Error;

/// Errors raised by the core pipeline components.
#[derive(Debug, Error)]
pub enum Error {
    /// Input text is not well-formed (JSON syntax, truncated input).
    #[error("parse error: {0}")]
    Parse(String),

    /// Input is well-formed but does not match the expected shape.
    #[error("schema error: {0}")]
    Schema(String),

    /// A value violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    /// An offline log could not be read.
    #[error("replay error in {file}: {message}")]
    Replay { file: String, message: String },

    #[error("csv header mismatch: expected {expected:?}, found {actual:?}")]
    CsvSchema { expected: String, actual: String },

    #[error("csv parse error on line {line}: {message}")]
    CsvParse { line: usize, message: String },

    #[error("i/o error after {rows_written} rows: {source}")]
    Io {
        rows_written: usize,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(source: std::io::Error) -> Self {
        Error::Io {
            rows_written: 0,
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
