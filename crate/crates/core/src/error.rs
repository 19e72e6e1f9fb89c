use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative routine failed to reach its tolerance.
    #[error("numeric error: {message} (residual {residual:e})")]
    Numeric { message: String, residual: f64 },

    /// A model could not be estimated from the supplied data.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Partial likelihood is monotone; the estimate diverges.
    #[error("monotone likelihood: {0}")]
    MonotoneLikelihood(String),

    /// Between-trial quantities are degenerate (zero variance, constant predictor).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A classification record is incomplete.
    #[error("classification error: {0}")]
    Classification(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>, residual: f64) -> Self {
        Error::Numeric {
            message: msg.into(),
            residual,
        }
    }

    pub fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
