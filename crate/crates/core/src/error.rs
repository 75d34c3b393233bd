use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid dilation structure: {0}")]
    InvalidDilation(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("vector field does not vanish at the origin: |f(0,0)| = {0}")]
    OriginNotEquilibrium(f64),
    #[error("control signal does not cover [0, {requested}] (ends at {available})")]
    SignalTooShort { requested: f64, available: f64 },
    #[error("integration stopped at t = {t}: {reason}")]
    Integration { t: f64, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}
