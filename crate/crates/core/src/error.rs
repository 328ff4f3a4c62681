use thiserror::Error;

/// Errors raised by the models, simulator, estimators and budget code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("protocol overrun: round trip of ping {index} ({rtt:e} s) does not fit the ping interval ({interval:e} s)")]
    ProtocolOverrun { index: usize, rtt: f64, interval: f64 },

    #[error("causality violation: respond {index} would leave before its ping arrived")]
    Causality { index: usize },

    #[error("phase is undefined at zero difference frequency")]
    UndefinedPhase,

    #[error("short epoch: expected {expected} ping/respond pairs, heard {heard}")]
    ShortEpoch { expected: usize, heard: usize },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn ensure_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite, got {x}")))
    }
}
