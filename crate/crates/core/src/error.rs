use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Arguments outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine did not reach its tolerance.
    #[error("numeric error: {message} (achieved tolerance {achieved:e})")]
    Numeric { message: String, achieved: f64 },

    /// The operation is not defined for the ensemble's sampling scheme.
    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),

    /// Too few usable data points for a regression or estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Shapes of two inputs disagree.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Configuration validation failure, with a dotted field path.
    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },

    /// Configuration text could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, achieved: f64) -> Self {
        Error::Numeric {
            message: msg.into(),
            achieved,
        }
    }

    pub(crate) fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: msg.into(),
        }
    }

    /// Whether the error stems from user input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Validation { .. }
                | Error::Parse(_)
                | Error::DimensionMismatch { .. }
                | Error::UnsupportedScheme(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
