use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid noise model: {0}")]
    InvalidNoiseModel(String),

    #[error("unbounded set: stacked data matrix has rank {rank} < {required}")]
    UnboundedSet { rank: usize, required: usize },

    #[error("infeasible: best attainable margin {margin:e}")]
    Infeasible { margin: f64 },

    #[error("backend failure after {iterations} iterations: {reason}")]
    BackendFailure { iterations: usize, reason: String },

    #[error("no candidate mode survived detection")]
    EmptyCandidates,

    #[error("detection did not terminate within {steps} online steps")]
    NonTermination { steps: usize },

    #[error("modes are not separable by any input")]
    NotSeparable,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("timer {timer} left its range at t = {t} (value {value:e})")]
    RangeViolation { timer: &'static str, t: usize, value: f64 },

    #[error("envelope violated at t = {t}: {detail}")]
    EnvelopeViolation { t: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
