use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("level {level}: coin budget of {budget} raw steps exhausted before covering {required} steps")]
    InsufficientCoins { level: u32, budget: u64, required: u64 },

    #[error("path too short: found {found} exits, needed {needed}")]
    PathTooShort { found: usize, needed: usize },

    #[error("level mismatch: {left} vs {right}")]
    LevelMismatch { left: u32, right: u32 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("horizon exceeded: requested {requested}, available {available}")]
    HorizonExceeded { requested: usize, available: usize },

    #[error("lattice point ({x1}, {x2}) outside window of radius {radius}")]
    OutOfWindow { x1: i64, x2: i64, radius: i64 },

    #[error("field is not discretely conservative (max |curl| = {max_curl:e})")]
    NotConservative { max_curl: f64 },

    #[error("radius must be positive, got {0}")]
    NonpositiveDelta(f64),

    #[error("proxy covers {available} steps, {required} required")]
    ProxyTooShort { required: usize, available: usize },

    #[error("rung (delta={delta}, m={level}) below lattice resolution")]
    LadderTooAggressive { delta: f64, level: u32 },

    #[error("argument {0} outside the domain")]
    DomainError(f64),

    #[error("time must be positive, got {0}")]
    NonpositiveTime(f64),

    #[error("argument must be nonnegative, got {0}")]
    NegativeArgument(f64),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("memory cap exceeded at level {level}, horizon {horizon}: need ~{needed_mb} MiB, cap {cap_mb} MiB")]
    ResourceExhausted { level: u32, horizon: f64, needed_mb: u64, cap_mb: u64 },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
