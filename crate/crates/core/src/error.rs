use thiserror::Error;

/// Errors raised by the library.
///
/// The variants split along the lines the CLI maps to exit codes: schema,
/// typing and parse problems are data errors, `Config` and `Argument` are
/// caller mistakes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("typing error: {0}")]
    Typing(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
