use thiserror::Error;

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters, malformed configuration or model files.
    Config,
    /// Numerically unsafe operation refused (ill-conditioned inversion, no signal).
    Numerical,
    /// Filesystem or CSV I/O failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: f64, right: f64 },

    #[error("polynomial {polynomial:#x} is not primitive: period {period}, expected {expected}")]
    NonPrimitive {
        polynomial: u32,
        period: u64,
        expected: u64,
    },

    #[error("ill-conditioned inversion: {0}")]
    IllConditioned(String),

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_)
            | Error::SampleRateMismatch { .. }
            | Error::NonPrimitive { .. }
            | Error::Parse(_) => ErrorClass::Config,
            Error::IllConditioned(_) | Error::NoSignal(_) => ErrorClass::Numerical,
            Error::Io(_) | Error::Csv(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
