use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value violates a documented precondition.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument has the wrong shape or an out-of-range value.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The requested operation has no implementation for this combination.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The sampled data cannot be fit (for example a singular Gram matrix).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Iterates blew up during distributed SGD.
    #[error("numeric divergence at round {round}: {detail}")]
    Divergence { round: usize, detail: String },

    /// A numerical routine produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for errors caused by bad inputs rather than by the computation.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Argument(_) | Error::Unsupported(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
