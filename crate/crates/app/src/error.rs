use std::fmt;

/// Failure classes with distinct process exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum AppError {
    /// Invalid configuration, arguments or input files.
    Invalid(String),
    /// Anything that goes wrong after the inputs were accepted.
    Runtime(String),
}

pub type AppResult<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Invalid(_) => 3,
            AppError::Runtime(_) => 1,
        }
    }

    pub fn invalid(msg: impl fmt::Display) -> Self {
        AppError::Invalid(msg.to_string())
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        AppError::Runtime(msg.to_string())
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Invalid(m) => write!(f, "invalid input: {m}"),
            AppError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for AppError {}

impl From<bolus_core::Error> for AppError {
    fn from(e: bolus_core::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

/// Tags a lower-level error as caused by bad input.
pub trait InvalidContext<T> {
    fn invalid(self, what: &str) -> AppResult<T>;
}

impl<T, E: fmt::Display> InvalidContext<T> for std::result::Result<T, E> {
    fn invalid(self, what: &str) -> AppResult<T> {
        self.map_err(|e| AppError::Invalid(format!("{what}: {e}")))
    }
}
