use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("map error at row {row}, col {col}: {msg}")]
    Map { row: usize, col: usize, msg: String },

    #[error("map error: {0}")]
    MapGlobal(String),

    #[error("MDP has no goal states")]
    MissingGoals,

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("optimizer diverged: {0}")]
    OptimDiverged(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("scripted expert stuck: {0}")]
    ExpertStuck(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from bad input rather than a runtime failure.
    /// The CLI maps validation errors to exit code 1 and the rest to 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::OptimDiverged(_) | Error::Io(_) | Error::ExpertStuck(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
