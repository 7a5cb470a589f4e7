use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("closed-form stationary law is singular at p = 1/2; use the linear solver")]
    SingularParameter,

    #[error("chain did not return to state {state} within {cap} steps")]
    NonReturn { state: usize, cap: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("two-state closed form is outside its validity region at s = {s}")]
    OutOfDomain { s: f64 },

    #[error("kernel diverges at s = {s} (spectral radius {spectral_radius})")]
    Divergence { s: f64, spectral_radius: f64 },

    #[error("no stationary solution: Lyapunov estimate {rho} (+3 stderr = {upper}) is not negative")]
    NonNegativeRho { rho: f64, upper: f64 },

    #[error("kernel stays at or below 1 on (0, {s_max}]")]
    RootAboveCap { s_max: f64 },

    #[error("not enough samples: need {needed}, have {have}")]
    Size { needed: usize, have: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
