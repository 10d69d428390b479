use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("no equilibrium: {0}")]
    NoEquilibrium(String),

    /// The state became non-finite, exceeded the blow-up threshold, or the
    /// step size underflowed. Carries the last accepted time.
    #[error("blow-up at t = {t}: {reason}")]
    BlowUp { t: f64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
