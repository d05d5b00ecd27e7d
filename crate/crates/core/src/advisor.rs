//! Meal-bolus recommendation with an insulin-on-board constraint, and the standard
//! bolus calculator used as the clinical baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ars::{total_cost, CostConfig};
use crate::bo::{optimize_bolus, BoConfig, Observation};
use crate::error::{Error, Result};
use crate::pg::{PgPredictor, PredictedTrajectory};
use crate::scalar::Scalar;

/// Linear insulin-action decay over the duration of insulin action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IobModel {
    pub duration_minutes: f64,
}

impl Default for IobModel {
    fn default() -> Self {
        IobModel {
            duration_minutes: 240.0,
        }
    }
}

impl IobModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_minutes > 0.0) || !self.duration_minutes.is_finite() {
            return Err(Error::InvalidParameter {
                name: "duration_minutes",
                reason: format!("must be > 0, got {}", self.duration_minutes),
            });
        }
        Ok(())
    }

    /// Fraction of a dose still active `elapsed_minutes` after delivery.
    pub fn remaining_fraction(&self, elapsed_minutes: f64) -> f64 {
        (1.0 - elapsed_minutes / self.duration_minutes).clamp(0.0, 1.0)
    }
}

/// A delivered dose; `time` in seconds on the same clock as `now`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseRecord {
    pub time: f64,
    pub units: f64,
}

/// Insulin on board at `now` from the dose history.
pub fn iob(history: &[DoseRecord], now: f64, model: &IobModel) -> Result<f64> {
    model.validate()?;
    let mut total = 0.0;
    for dose in history {
        if !(dose.units >= 0.0) || !dose.units.is_finite() {
            return Err(Error::InvalidParameter {
                name: "dose.units",
                reason: format!("must be finite and >= 0, got {}", dose.units),
            });
        }
        if !(dose.time <= now) {
            return Err(Error::InvalidParameter {
                name: "dose.time",
                reason: format!("dose at {} is after now = {now}", dose.time),
            });
        }
        total += dose.units * model.remaining_fraction((now - dose.time) / 60.0);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalculatorSettings {
    /// Carbohydrate ratio, g/U.
    pub cr: f64,
    /// Correction factor, mg/dL per U.
    pub cf: f64,
    /// Glucose set-point, mg/dL.
    pub g_sp: f64,
}

impl CalculatorSettings {
    pub fn new(cr: f64, cf: f64) -> Self {
        CalculatorSettings { cr, cf, g_sp: 140.0 }
    }
}

/// `max(0, cho/CR + (g_c - G_sp)/CF - iob)`.
pub fn standard_calculator(cho: f64, g_c: f64, settings: &CalculatorSettings, iob: f64) -> Result<f64> {
    if !(settings.cr > 0.0) || !(settings.cf > 0.0) {
        return Err(Error::InvalidParameter {
            name: "calculator",
            reason: format!("CR and CF must be > 0, got {} and {}", settings.cr, settings.cf),
        });
    }
    if !(cho >= 0.0) || !cho.is_finite() || !g_c.is_finite() || !iob.is_finite() {
        return Err(Error::NonFinite("calculator input"));
    }
    Ok((cho / settings.cr + (g_c - settings.g_sp) / settings.cf - iob).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AdvisorConfig<S: Scalar> {
    pub cost: CostConfig<S>,
    pub bo: BoConfig,
    pub iob: IobModel,
}

impl<S: Scalar> Default for AdvisorConfig<S> {
    fn default() -> Self {
        AdvisorConfig {
            cost: CostConfig::default(),
            bo: BoConfig::default(),
            iob: IobModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BolusRecommendation<S: Scalar> {
    pub raw_bolus: S,
    pub iob: S,
    pub final_bolus: S,
    pub trajectory_at_solution: PredictedTrajectory<S>,
    pub bo_trace: Vec<Observation<S>>,
    pub surrogate_failed: bool,
}

/// Chooses the bolus minimizing the expected risk-sensitive cost of the predicted
/// trajectory, then subtracts insulin on board.
///
/// Every cost evaluation restarts the Monte-Carlo stream from `seed`, so the optimizer
/// sees common random numbers across candidate boluses.
pub fn recommend_bolus<S: Scalar>(
    predictor: &PgPredictor<S>,
    preprandial: &[S],
    meal: Option<S>,
    config: &AdvisorConfig<S>,
    history: &[DoseRecord],
    now: f64,
    seed: u64,
) -> Result<BolusRecommendation<S>> {
    config.cost.validate()?;
    if meal.is_some() != predictor.meal_aware {
        return Err(Error::MealAwarenessMismatch {
            meal_aware: predictor.meal_aware,
            supplied: meal.is_some(),
        });
    }
    let on_board = iob(history, now, &config.iob)?;
    let objective = |u: S| {
        let traj = predictor.predict_trajectory(preprandial, u, meal)?;
        total_cost(&traj, u, &config.cost, &mut ChaCha8Rng::seed_from_u64(seed))
    };
    let outcome = optimize_bolus(objective, config.cost.u_max, &config.bo)?;
    let raw = outcome.u_best;
    let final_bolus = (raw - S::lit(on_board)).max(S::zero());
    let trajectory_at_solution = predictor.predict_trajectory(preprandial, raw, meal)?;
    Ok(BolusRecommendation {
        raw_bolus: raw,
        iob: S::lit(on_board),
        final_bolus,
        trajectory_at_solution,
        bo_trace: outcome.trace,
        surrogate_failed: outcome.surrogate_failed,
    })
}
