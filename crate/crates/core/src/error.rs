use thiserror::Error;

#[derive(Debug, Error)]
pub enum MegaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MegaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MegaError::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        MegaError::NumericalFailure(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        MegaError::Parse {
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MegaError>;
