//! Advisory-mode replay: recommend a bolus at every recorded meal of a clinical trace
//! without feeding the recommendation back into the data.

use std::io::Write;

use bolus_core::advisor::{recommend_bolus, DoseRecord};
use bolus_core::pg::{MealClass, WINDOW};
use bolus_insilico::protocol::derive_seed;
use serde::Serialize;

use crate::clinical::{ClinicalMeal, ClinicalTrace};
use crate::config::{AppConfig, SCHEMA};
use crate::error::AppResult;
use crate::models::ModelSet;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayRow {
    pub time: String,
    pub time_s: f64,
    pub meal_class: MealClass,
    pub model: String,
    pub grams: Option<f64>,
    pub preprandial: Vec<f64>,
    pub clinician_bolus: Option<f64>,
    pub recommended_bolus: f64,
    pub raw_bolus: f64,
    pub iob: f64,
    pub predicted_means: Vec<f64>,
    pub predicted_variances: Vec<f64>,
    pub surrogate_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRow {
    pub time: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub schema: String,
    pub rows: Vec<ReplayRow>,
    pub skipped: Vec<SkippedRow>,
}

/// One row per meal with a model for its class and a complete preprandial window.
///
/// Each row sees only the recorded clinician doses before it, and its random stream is
/// keyed by the meal time, so a row never depends on any other row's recommendation.
pub fn replay(
    trace: &ClinicalTrace,
    meals: &[ClinicalMeal],
    models: &ModelSet,
    config: &AppConfig,
    seed: u64,
) -> AppResult<ReplayReport> {
    let doses: Vec<DoseRecord> = meals
        .iter()
        .filter_map(|m| {
            m.clinician_bolus.map(|units| DoseRecord {
                time: m.time_s,
                units,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for meal in meals {
        let time = meal.time.format("%Y-%m-%dT%H:%M:%S").to_string();
        let mut skip = |reason: String| {
            skipped.push(SkippedRow {
                time: time.clone(),
                reason,
            })
        };
        let class = meal.meal_class();
        let Some(model) = models.get(class) else {
            skip(format!("no {class} model"));
            continue;
        };
        let Some(window) = trace.trace.preprandial_window(meal.time_s) else {
            skip("incomplete preprandial window".into());
            continue;
        };
        let carbs = match (model.predictor.meal_aware, meal.grams) {
            (true, Some(g)) => Some(g),
            (true, None) => {
                skip("meal-aware model but no grams recorded".into());
                continue;
            }
            (false, _) => None,
        };
        let history: Vec<DoseRecord> = doses.iter().copied().filter(|d| d.time < meal.time_s).collect();
        let rec = recommend_bolus(
            &model.predictor,
            &window,
            carbs,
            &config.advisor,
            &history,
            meal.time_s,
            derive_seed(seed, meal.time_s.round() as u64),
        )?;
        rows.push(ReplayRow {
            time,
            time_s: meal.time_s,
            meal_class: class,
            model: model.name.clone(),
            grams: meal.grams,
            preprandial: window.to_vec(),
            clinician_bolus: meal.clinician_bolus,
            recommended_bolus: rec.final_bolus,
            raw_bolus: rec.raw_bolus,
            iob: rec.iob,
            predicted_means: rec.trajectory_at_solution.means,
            predicted_variances: rec.trajectory_at_solution.variances,
            surrogate_failed: rec.surrogate_failed,
        });
    }
    Ok(ReplayReport {
        schema: SCHEMA.to_string(),
        rows,
        skipped,
    })
}

impl ReplayReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> AppResult<()> {
        write!(w, "time,meal_class,model,grams,clinician_bolus,recommended_bolus,raw_bolus,iob")?;
        for k in 0..WINDOW {
            write!(w, ",g_minus_{}", (WINDOW - 1 - k) * 15)?;
        }
        for k in 1..=WINDOW {
            write!(w, ",pred_{}", k * 15)?;
        }
        writeln!(w)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        for r in &self.rows {
            write!(
                w,
                "{},{},{},{},{},{:.4},{:.4},{:.4}",
                r.time,
                r.meal_class,
                r.model,
                opt(r.grams),
                opt(r.clinician_bolus),
                r.recommended_bolus,
                r.raw_bolus,
                r.iob
            )?;
            for g in r.preprandial.iter().chain(&r.predicted_means) {
                write!(w, ",{g:.2}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable summary.
    pub fn text(&self) -> String {
        let mut out = format!(
            "{:<21}{:<14}{:>8}{:>11}{:>13}{:>8}\n",
            "time", "meal", "grams", "clinician", "recommended", "iob"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<21}{:<14}{:>8}{:>11}{:>13.2}{:>8.2}\n",
                r.time,
                r.meal_class.as_str(),
                r.grams.map_or("-".into(), |g| format!("{g:.0}")),
                r.clinician_bolus.map_or("-".into(), |b| format!("{b:.1}")),
                r.recommended_bolus,
                r.iob
            ));
        }
        for s in &self.skipped {
            out.push_str(&format!("{:<21}skipped: {}\n", s.time, s.reason));
        }
        out
    }
}
