use thiserror::Error;

/// Errors raised by the monitoring library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value {value} escapes envelope domain [{lower}, {upper}]")]
    DomainEscape { value: f64, lower: f64, upper: f64 },

    #[error("observer synthesis infeasible: {constraint} (residual {residual:.3e})")]
    SynthesisInfeasible { constraint: String, residual: f64 },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("internal error: {0}")]
    InternalError(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
