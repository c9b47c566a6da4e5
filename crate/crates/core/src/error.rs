use thiserror::Error;

/// Errors raised by the optimizer, simulator and experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed inconsistent or out-of-range arguments.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numerical routine failed (non-PD covariance, non-finite state, ...).
    #[error("numeric failure: {message}")]
    Numeric {
        message: String,
        /// Free-form dump of the offending state for post-mortem.
        diagnostics: String,
    },

    /// Experiment configuration rejected at validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(message: impl Into<String>, diagnostics: impl Into<String>) -> Self {
        Error::Numeric {
            message: message.into(),
            diagnostics: diagnostics.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
