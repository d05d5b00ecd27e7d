//! The frozen ten-patient cohort and the generator it was built with.

use std::path::Path;

use bolus_core::advisor::CalculatorSettings;
use bolus_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::patient::PatientParams;

pub const COHORT_SCHEMA: &str = "cohort/v1";
pub const COHORT_SEED: u64 = 20_200_101;
pub const COHORT_SIZE: usize = 10;
/// Largest multiplicative perturbation of a nominal parameter.
pub const COHORT_SPREAD: f64 = 1.25;

/// Set-point used by the calculator and for deriving each patient's carbohydrate ratio.
pub const CALCULATOR_SET_POINT: f64 = 140.0;
/// Daily carbohydrate assumed when estimating total daily insulin.
pub const DAILY_CARBS_G: f64 = 200.0;

static SHIPPED: &str = include_str!("../data/cohort.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortPatient {
    pub id: String,
    pub params: PatientParams,
    /// Nominal basal rate, U/h.
    pub basal_u_per_h: f64,
    pub calculator: CalculatorSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub schema: String,
    pub description: String,
    pub generator_seed: u64,
    pub spread: f64,
    pub patients: Vec<CohortPatient>,
}

impl Cohort {
    pub fn validate(&self) -> Result<()> {
        if self.schema != COHORT_SCHEMA {
            return Err(Error::InvalidParameter {
                name: "schema",
                reason: format!("expected {COHORT_SCHEMA}, got {}", self.schema),
            });
        }
        if self.patients.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for p in &self.patients {
            p.params.validate()?;
            if !(p.basal_u_per_h > 0.0) || !(p.calculator.cr > 0.0) || !(p.calculator.cf > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "patient",
                    reason: format!("{}: basal, CR and CF must be > 0", p.id),
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Cohort = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The cohort shipped with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("shipped cohort file is valid")
    }
}

fn round_to_tenth(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Calculator settings for a patient: CR from the model's insulin-to-carbohydrate balance
/// at the set-point, CF from the 1800 rule on the implied total daily insulin.
pub fn calculator_for(params: &PatientParams) -> CalculatorSettings {
    let cr = params.model_carb_ratio(CALCULATOR_SET_POINT);
    let tdi = 24.0 * params.nominal_basal() + DAILY_CARBS_G / cr;
    CalculatorSettings {
        cr: round_to_tenth(cr),
        cf: round_to_tenth(1800.0 / tdi),
        g_sp: CALCULATOR_SET_POINT,
    }
}

/// Log-normal perturbations of the nominal parameters: each factor is `exp(σ z)` with
/// `z` standard normal truncated to `[-2, 2]` and `σ = ln(spread) / 2`.
pub fn generate_cohort(seed: u64, n: usize) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = COHORT_SPREAD.ln() / 2.0;
    let mut factor = || loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            break (sigma * z).exp();
        }
    };
    let nominal = PatientParams::default();
    let patients = (0..n)
        .map(|k| {
            let params = PatientParams {
                s_g: nominal.s_g * factor(),
                x_b: nominal.x_b * factor(),
                s_i: nominal.s_i * factor(),
                p2: nominal.p2 * factor(),
                k_e: nominal.k_e * factor(),
                bw: nominal.bw * factor(),
                tau_i: nominal.tau_i * factor(),
                tau_m: nominal.tau_m * factor(),
                ..nominal
            };
            CohortPatient {
                id: format!("adult#{:03}", k + 1),
                basal_u_per_h: params.nominal_basal(),
                calculator: calculator_for(&params),
                params,
            }
        })
        .collect();
    Cohort {
        schema: COHORT_SCHEMA.to_string(),
        description: format!(
            "minimal-model adults; s_g, x_b, s_i, p2, k_e, bw, tau_i, tau_m scaled by \
             exp(ln({COHORT_SPREAD})/2 * z), z ~ N(0,1) truncated to [-2, 2]; seed {seed}"
        ),
        generator_seed: seed,
        spread: COHORT_SPREAD,
        patients,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_cohort_matches_generator() {
        let shipped = Cohort::shipped();
        let fresh = generate_cohort(COHORT_SEED, COHORT_SIZE);
        assert_eq!(shipped.patients.len(), COHORT_SIZE);
        for (a, b) in shipped.patients.iter().zip(&fresh.patients) {
            assert_eq!(a.id, b.id);
            assert!((a.params.s_i - b.params.s_i).abs() < 1e-15);
            assert!((a.basal_u_per_h - b.basal_u_per_h).abs() < 1e-12);
            assert_eq!(a.calculator, b.calculator);
        }
    }

    #[test]
    fn perturbations_stay_within_spread() {
        let c = generate_cohort(3, 50);
        let nominal = PatientParams::default();
        for p in &c.patients {
            for (v, n) in [(p.params.s_i, nominal.s_i), (p.params.tau_m, nominal.tau_m)] {
                let r = v / n;
                assert!((1.0 / COHORT_SPREAD - 1e-12..=COHORT_SPREAD + 1e-12).contains(&r));
            }
            assert_eq!(p.params.f, nominal.f);
        }
    }

    #[test]
    fn nominal_calculator_settings() {
        let c = calculator_for(&PatientParams::default());
        // 140 · 8e-4 · 1.6 / (0.12 · 0.14 · 0.9)
        assert!((c.cr - 11.9).abs() < 1e-9);
        assert_eq!(c.g_sp, 140.0);
        assert!(c.cf > 30.0 && c.cf < 80.0);
    }

    #[test]
    fn validation_rejects_bad_files() {
        let mut c = generate_cohort(1, 2);
        c.schema = "other".into();
        assert!(Cohort::from_json(&c.to_json().unwrap()).is_err());
        assert!(Cohort::from_json("{").is_err());
    }
}
