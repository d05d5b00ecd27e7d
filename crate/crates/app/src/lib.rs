//! Command line, configuration, clinical replay and HTTP service around the bolus advisor.

pub mod cli;
pub mod clinical;
pub mod config;
pub mod error;
pub mod models;
pub mod pipeline;
pub mod replay;
pub mod report;
pub mod service;

pub use config::AppConfig;
pub use error::{AppError, AppResult};
