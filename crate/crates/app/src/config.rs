//! Application configuration file.

use std::path::{Path, PathBuf};

use bolus_core::advisor::{AdvisorConfig, CalculatorSettings};
use bolus_core::pg::PgTrainConfig;
use bolus_insilico::cohort::Cohort;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult, InvalidContext};

pub const SCHEMA: &str = "v1";

/// Everything the CLI and the service need besides models and data files. Missing
/// sections take their defaults, so `{}` is a valid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub schema: String,
    /// Cost, optimizer and insulin-on-board settings of the advisor.
    pub advisor: AdvisorConfig<f64>,
    /// Calculator used by `recommend` and `replay` for the reference dose.
    pub calculator: CalculatorSettings,
    pub training: PgTrainConfig,
    /// Cohort file; the shipped cohort when absent.
    pub cohort: Option<PathBuf>,
    pub seed: u64,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            schema: SCHEMA.to_string(),
            advisor: AdvisorConfig::default(),
            calculator: CalculatorSettings::new(12.0, 45.0),
            training: PgTrainConfig::default(),
            cohort: None,
            seed: 0,
        }
    }
}

impl AppConfig {
    pub fn validate(&self) -> AppResult<()> {
        if self.schema != SCHEMA {
            return Err(AppError::invalid(format!(
                "config schema must be \"{SCHEMA}\", got \"{}\"",
                self.schema
            )));
        }
        self.advisor.cost.validate().invalid("advisor.cost")?;
        self.advisor.bo.validate().invalid("advisor.bo")?;
        self.advisor.iob.validate().invalid("advisor.iob")?;
        let c = &self.calculator;
        for (name, v) in [("cr", c.cr), ("cf", c.cf), ("g_sp", c.g_sp)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AppError::invalid(format!("calculator.{name} must be > 0, got {v}")));
            }
        }
        let t = &self.training;
        if !(t.relative_slope_precision >= 0.0 && t.relative_slope_precision.is_finite()) {
            return Err(AppError::invalid(format!(
                "training.relative_slope_precision must be >= 0, got {}",
                t.relative_slope_precision
            )));
        }
        if t.fit.restarts == 0 {
            return Err(AppError::invalid("training.fit.restarts must be >= 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> AppResult<Self> {
        let cfg: AppConfig = serde_json::from_str(text).invalid("config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).invalid(&path.display().to_string())?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn cohort(&self) -> AppResult<Cohort> {
        match &self.cohort {
            Some(p) => Cohort::load(p).invalid("cohort"),
            None => Ok(Cohort::shipped()),
        }
    }
}
