use thiserror::Error;

/// Errors raised by the solvers, generators and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix I + (h/2)DQ is singular or numerically singular (h = {h})")]
    SingularMatrix { h: f64 },

    #[error("no sign change of the multiplier equation found up to eta = {cap}")]
    NoBracket { cap: f64 },

    #[error("multiplier equation vanishes identically along the search ray")]
    Degenerate,

    #[error("bracket endpoint eta = {eta} has the wrong sign (F = {value:e})")]
    InvalidBracket { eta: f64, value: f64 },

    #[error("gradient vanishes at the current iterate")]
    StationaryPoint,

    #[error("multiplier root finding failed: {0}")]
    RootFailure(Box<Error>),

    #[error("trial step no longer changes the iterate in floating point")]
    NoProgress,

    #[error("line search gave up after {0} reductions")]
    BacktrackLimit(u32),

    #[error("constant `{0}` is required but unknown")]
    MissingConstant(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
