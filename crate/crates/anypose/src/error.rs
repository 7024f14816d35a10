use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a validation precondition.
    #[error("{0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("time grid is empty")]
    EmptyTimeGrid,

    #[error("time grid entry {value} must be a finite positive number")]
    BadTime { value: f64 },

    #[error("time grid must be canonical (strictly increasing, no duplicates)")]
    NonCanonicalGrid,

    #[error("solver exceeded max_steps={max_steps} at t={t_reached}")]
    MaxSteps { max_steps: usize, t_reached: f64 },

    #[error("dynamics diverged: non-finite state at t={t_reached}")]
    NonFiniteState { t_reached: f64 },

    #[error("insufficient history: order {order} needs {needed} observed poses, got {got}")]
    InsufficientHistory { order: u8, needed: usize, got: usize },

    #[error("query time {t} s exceeds the forecast horizon cap of {cap} s")]
    HorizonExceeded { t: f64, cap: f64 },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}:{line}: {msg}")]
    CsvParse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("solve tape was recorded with an adaptive solver; training requires a fixed-step method")]
    AdaptiveTape,

    #[error("ground truth at t={t} s is not representable: no oracle and no frame at that time")]
    GroundTruthUnavailable { t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
