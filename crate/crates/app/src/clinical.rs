//! Clinical trace files: `timestamp,glucose` readings with ISO-8601 timestamps and a
//! sibling meals file `time,grams,clinician_bolus`.

use std::path::{Path, PathBuf};

use bolus_core::pg::{GlucoseTrace, MealClass, MealEvent};
use chrono::{DateTime, NaiveDateTime, NaiveTime};
use serde::Deserialize;

use crate::error::{AppError, AppResult, InvalidContext};

const NAIVE_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%d %H:%M",
];

/// Parses an ISO-8601 timestamp. An explicit offset is honored by taking the local
/// wall-clock time at that offset, so meal classes follow the patient's clock.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    NAIVE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Seconds are counted from midnight of the first reading's day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeOrigin(pub NaiveDateTime);

impl TimeOrigin {
    pub fn seconds(&self, t: NaiveDateTime) -> f64 {
        (t - self.0).num_milliseconds() as f64 / 1000.0
    }

    pub fn timestamp(&self, seconds: f64) -> NaiveDateTime {
        self.0 + chrono::Duration::milliseconds((seconds * 1000.0).round() as i64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalTrace {
    pub origin: TimeOrigin,
    pub trace: GlucoseTrace,
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    timestamp: String,
    glucose: f64,
}

pub fn read_trace(path: &Path) -> AppResult<ClinicalTrace> {
    let what = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .invalid(&what)?;
    let mut rows = Vec::new();
    for (line, rec) in reader.deserialize::<TraceRow>().enumerate() {
        let rec = rec.invalid(&what)?;
        let t = parse_timestamp(&rec.timestamp).ok_or_else(|| {
            AppError::invalid(format!(
                "{what}: row {}: `{}` is not an ISO-8601 timestamp",
                line + 1,
                rec.timestamp
            ))
        })?;
        rows.push((t, rec.glucose));
    }
    let first = rows
        .first()
        .ok_or_else(|| AppError::invalid(format!("{what}: no readings")))?
        .0;
    let origin = TimeOrigin(first.date().and_time(NaiveTime::MIN));
    let samples = rows.iter().map(|&(t, g)| (origin.seconds(t), g)).collect();
    let trace = GlucoseTrace::new(samples).invalid(&what)?;
    Ok(ClinicalTrace { origin, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalMeal {
    pub time: NaiveDateTime,
    /// Seconds from the trace origin.
    pub time_s: f64,
    pub grams: Option<f64>,
    pub clinician_bolus: Option<f64>,
}

impl ClinicalMeal {
    pub fn meal_class(&self) -> MealClass {
        MealClass::from_clock_seconds(self.time_s.rem_euclid(86_400.0))
    }
}

#[derive(Debug, Deserialize)]
struct MealRow {
    time: String,
    grams: Option<f64>,
    clinician_bolus: Option<f64>,
}

pub fn read_meals(path: &Path, origin: TimeOrigin) -> AppResult<Vec<ClinicalMeal>> {
    let what = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .invalid(&what)?;
    let mut meals = Vec::new();
    for (line, rec) in reader.deserialize::<MealRow>().enumerate() {
        let rec = rec.invalid(&what)?;
        let time = parse_timestamp(&rec.time).ok_or_else(|| {
            AppError::invalid(format!(
                "{what}: row {}: `{}` is not an ISO-8601 timestamp",
                line + 1,
                rec.time
            ))
        })?;
        for (name, v) in [("grams", rec.grams), ("clinician_bolus", rec.clinician_bolus)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(AppError::invalid(format!(
                        "{what}: row {}: {name} must be >= 0, got {v}",
                        line + 1
                    )));
                }
            }
        }
        meals.push(ClinicalMeal {
            time,
            time_s: origin.seconds(time),
            grams: rec.grams,
            clinician_bolus: rec.clinician_bolus,
        });
    }
    meals.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    Ok(meals)
}

/// `clinic.csv` pairs with `clinic.meals.csv`.
pub fn sibling_meals_path(trace: &Path) -> PathBuf {
    let stem = trace
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    trace.with_file_name(format!("{stem}.meals.csv"))
}

/// Meal events for sample serialization; every meal needs a clinician bolus.
pub fn meal_events(meals: &[ClinicalMeal]) -> AppResult<Vec<MealEvent>> {
    meals
        .iter()
        .map(|m| {
            let bolus = m.clinician_bolus.ok_or_else(|| {
                AppError::invalid(format!("meal at {} has no clinician_bolus", m.time))
            })?;
            Ok(MealEvent {
                time: m.time_s,
                carbs: m.grams.unwrap_or(0.0),
                bolus,
                meal_class: m.meal_class(),
            })
        })
        .collect()
}
