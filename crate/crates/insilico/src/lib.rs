//! Substitute in-silico cohort for evaluating meal-bolus policies: a minimal-model
//! virtual patient, the data-collection and evaluation protocols, and glycemic metrics.

pub mod cohort;
pub mod metrics;
pub mod patient;
pub mod protocol;
