use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("innovation covariance is numerically singular (condition estimate {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error("step index must be >= 1")]
    ZeroStep,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "enumeration needs {required} leaves at the horizon, above the cap of {cap}; \
         use the `aggregate` method (uniform chains) or the `pruned` method"
    )]
    CapExceeded { required: f64, cap: usize },

    #[error(
        "aggregate recursion requires every row of the transition matrix to be identical \
         (mode independent of the past); use the `exact` or `pruned` method instead"
    )]
    NonUniformChain,

    #[error("scenario is invalid:\n{0}")]
    Invalid(ValidationReport),

    #[error("malformed scenario document: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
