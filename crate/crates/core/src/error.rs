use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("matrix not positive definite after jitter escalation (max jitter {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("negative posterior variance {0:e} beyond round-off tolerance")]
    NegativeVariance(f64),

    #[error("hyperparameter fit failed: {0}")]
    FitFailed(String),

    #[error("empty glucose trace")]
    EmptyTrace,

    #[error("insufficient training data: {0}")]
    InsufficientData(String),

    #[error("meal information mismatch: predictor meal_aware={meal_aware}, meal supplied={supplied}")]
    MealAwarenessMismatch { meal_aware: bool, supplied: bool },

    #[error("bolus {u} outside [0, {u_max}]")]
    BolusOutOfBounds { u: f64, u_max: f64 },

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
