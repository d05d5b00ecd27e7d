//! Cohort runs: data collection, training, and closed-loop scenarios per patient.

use std::fmt;
use std::str::FromStr;

use bolus_core::pg::{train_pg_model_with, MealClass, PgPredictor, PgTrainingSample};
use bolus_insilico::cohort::{Cohort, CohortPatient};
use bolus_insilico::metrics::{compute_metrics, MetricsReport};
use bolus_insilico::protocol::{
    derive_seed, run_data_collection, run_protocol, AdvisorPolicy, BolusPolicy, CalculatorPolicy,
    ScenarioProtocol, SimulationResult,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Advisor,
    Calculator,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Advisor => "advisor",
            PolicyKind::Calculator => "calculator",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "advisor" | "proposed" => Ok(PolicyKind::Advisor),
            "calculator" | "control" => Ok(PolicyKind::Calculator),
            _ => Err(format!("unknown policy `{s}` (advisor, calculator)")),
        }
    }
}

/// A protocol plus whether the advisor is told the carbohydrate content.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: String,
    pub protocol: ScenarioProtocol,
    pub meal_info: bool,
}

impl Scenario {
    pub fn protocol_a(meal_info: bool) -> Self {
        Scenario {
            label: format!("A, {}", meal_label(meal_info)),
            protocol: ScenarioProtocol::protocol_a(),
            meal_info,
        }
    }

    pub fn protocol_b(basal_scale: f64, meal_info: bool) -> Self {
        Scenario {
            label: format!(
                "B, {:.0}% of nominal basal, {}",
                basal_scale * 100.0,
                meal_label(meal_info)
            ),
            protocol: ScenarioProtocol::protocol_b(basal_scale),
            meal_info,
        }
    }

    /// File-system friendly label.
    pub fn slug(&self) -> String {
        let mut s = self.protocol.name.replace('@', "_");
        s.push_str(if self.meal_info { "_im" } else { "_nm" });
        s
    }
}

fn meal_label(meal_info: bool) -> &'static str {
    if meal_info {
        "with meal information"
    } else {
        "without meal information"
    }
}

/// One closed-loop run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub policy: PolicyKind,
    pub result: SimulationResult,
    pub metrics: MetricsReport,
}

impl RunRecord {
    pub fn first_bolus(&self) -> Option<f64> {
        self.result.boluses.first().map(|b| b.units)
    }
}

#[derive(Debug, Clone)]
pub struct PatientRuns {
    pub patient_id: String,
    pub runs: Vec<RunRecord>,
}

impl PatientRuns {
    pub fn get(&self, policy: PolicyKind) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.policy == policy)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub patients: Vec<PatientRuns>,
}

impl ScenarioOutcome {
    pub fn metrics(&self, policy: PolicyKind) -> Vec<MetricsReport> {
        self.patients
            .iter()
            .filter_map(|p| p.get(policy).map(|r| r.metrics))
            .collect()
    }
}

/// Breakfast and lunch/dinner predictors of one kind.
#[derive(Debug, Clone)]
pub struct PredictorPair {
    pub breakfast: PgPredictor<f64>,
    pub lunch_dinner: PgPredictor<f64>,
}

pub fn split_by_class(samples: &[PgTrainingSample], class: MealClass) -> Vec<PgTrainingSample> {
    samples.iter().filter(|s| s.meal_class == class).cloned().collect()
}

pub fn train_pair(
    samples: &[PgTrainingSample],
    meal_aware: bool,
    config: &AppConfig,
) -> AppResult<PredictorPair> {
    let train = |class: MealClass| {
        train_pg_model_with(&split_by_class(samples, class), meal_aware, &config.training)
            .map_err(|e| AppError::runtime(format!("training {class} model: {e}")))
    };
    Ok(PredictorPair {
        breakfast: train(MealClass::Breakfast)?,
        lunch_dinner: train(MealClass::LunchDinner)?,
    })
}

/// Seed of the `k`-th cohort patient.
pub fn patient_seed(master: u64, k: usize) -> u64 {
    derive_seed(master, k as u64)
}

fn run_patient(
    patient: &CohortPatient,
    seed: u64,
    scenarios: &[Scenario],
    policies: &[PolicyKind],
    config: &AppConfig,
) -> AppResult<Vec<PatientRuns>> {
    let mut aware = None;
    let mut free = None;
    if policies.contains(&PolicyKind::Advisor) {
        let (_, samples) = run_data_collection(patient, seed)?;
        if scenarios.iter().any(|s| s.meal_info) {
            aware = Some(train_pair(&samples, true, config)?);
        }
        if scenarios.iter().any(|s| !s.meal_info) {
            free = Some(train_pair(&samples, false, config)?);
        }
    }
    scenarios
        .iter()
        .map(|scenario| {
            let runs = policies
                .iter()
                .map(|&policy| {
                    let mut boxed: Box<dyn BolusPolicy> = match policy {
                        PolicyKind::Calculator => Box::new(CalculatorPolicy::new(patient.calculator)),
                        PolicyKind::Advisor => {
                            let pair = if scenario.meal_info { &aware } else { &free };
                            let pair = pair.clone().expect("trained above");
                            Box::new(AdvisorPolicy::new(
                                pair.breakfast,
                                pair.lunch_dinner,
                                config.advisor.clone(),
                                seed,
                            ))
                        }
                    };
                    let result = run_protocol(patient, &scenario.protocol, boxed.as_mut(), seed)
                        .map_err(|e| {
                            AppError::runtime(format!("{} / {} / {policy}: {e}", patient.id, scenario.label))
                        })?;
                    let metrics = compute_metrics(&result.cgm)?;
                    Ok(RunRecord {
                        policy,
                        result,
                        metrics,
                    })
                })
                .collect::<AppResult<Vec<_>>>()?;
            Ok(PatientRuns {
                patient_id: patient.id.clone(),
                runs,
            })
        })
        .collect()
}

/// Runs every scenario under every policy for each selected patient. Patients run in
/// parallel; each uses its own seed, so results do not depend on scheduling.
pub fn run_cohort(
    cohort: &Cohort,
    patient_filter: Option<&str>,
    scenarios: &[Scenario],
    policies: &[PolicyKind],
    config: &AppConfig,
    master_seed: u64,
) -> AppResult<Vec<ScenarioOutcome>> {
    let selected: Vec<(usize, &CohortPatient)> = cohort
        .patients
        .iter()
        .enumerate()
        .filter(|(_, p)| patient_filter.is_none_or(|id| p.id == id))
        .collect();
    if selected.is_empty() {
        return Err(AppError::invalid(format!(
            "no patient `{}` in the cohort",
            patient_filter.unwrap_or_default()
        )));
    }
    let per_patient: Vec<Vec<PatientRuns>> = selected
        .par_iter()
        .map(|(k, p)| run_patient(p, patient_seed(master_seed, *k), scenarios, policies, config))
        .collect::<AppResult<_>>()?;
    Ok(scenarios
        .iter()
        .enumerate()
        .map(|(j, s)| ScenarioOutcome {
            scenario: s.clone(),
            patients: per_patient.iter().map(|runs| runs[j].clone()).collect(),
        })
        .collect())
}
