//! Scenario protocols, bolus policies and the closed-loop simulation driver.

use std::io::Write;

use bolus_core::advisor::{
    iob, recommend_bolus, standard_calculator, AdvisorConfig, BolusRecommendation,
    CalculatorSettings, DoseRecord, IobModel,
};
use bolus_core::pg::{
    serialize_samples, GlucoseTrace, MealClass, MealEvent, PgPredictor, PgTrainingSample,
    PERIOD_S, WINDOW,
};
use bolus_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortPatient;
use crate::patient::{StepInputs, VirtualPatient};

pub const DAY_S: f64 = 86_400.0;
pub const HOUR_S: f64 = 3_600.0;
/// Integration step, minutes.
pub const SIM_DT_MIN: f64 = 1.0;
pub const CGM_NOISE_SD: f64 = 2.0;
pub const CGM_FLOOR: f64 = 20.0;

/// A CGM reading: plasma glucose plus white noise, floored at [`CGM_FLOOR`].
pub fn cgm_read<R: Rng + ?Sized>(glucose: f64, noise_sd: f64, rng: &mut R) -> f64 {
    let noise = if noise_sd > 0.0 {
        noise_sd * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    (glucose + noise).max(CGM_FLOOR)
}

/// Derives an independent seed for stream `k` of a master seed.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(k.wrapping_add(1));
    rng.random()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MealTime {
    /// Seconds after midnight.
    Fixed { clock_s: f64 },
    /// Uniform over the 15-minute grid points of `[from_s, to_s]`.
    Uniform { from_s: f64, to_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MealSize {
    Fixed { grams: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MealPlan {
    /// Zero-based day index.
    pub day: u32,
    pub time: MealTime,
    pub size: MealSize,
    pub announced: bool,
}

impl MealPlan {
    fn window(&self) -> (f64, f64) {
        let base = self.day as f64 * DAY_S;
        match self.time {
            MealTime::Fixed { clock_s } => (base + clock_s, base + clock_s),
            MealTime::Uniform { from_s, to_s } => (base + from_s, base + to_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProtocol {
    pub name: String,
    /// Seconds after midnight of day 0.
    pub start_clock_s: f64,
    pub duration_h: f64,
    pub meals: Vec<MealPlan>,
    pub basal_scale: f64,
    pub cgm_noise_sd: f64,
}

fn clock(h: f64) -> f64 {
    h * HOUR_S
}

fn fixed_meals(days: &[[f64; 3]]) -> Vec<MealPlan> {
    days.iter()
        .enumerate()
        .flat_map(|(day, grams)| {
            [8.0, 12.0, 18.0].iter().zip(grams).map(move |(&h, &g)| MealPlan {
                day: day as u32,
                time: MealTime::Fixed { clock_s: clock(h) },
                size: MealSize::Fixed { grams: g },
                announced: true,
            })
        })
        .collect()
}

impl ScenarioProtocol {
    /// Two days from 05:00 with (55, 65, 85) g and then (45, 85, 65) g at 08:00, 12:00, 18:00.
    pub fn protocol_a() -> Self {
        ScenarioProtocol {
            name: "A".into(),
            start_clock_s: clock(5.0),
            duration_h: 48.0,
            meals: fixed_meals(&[[55.0, 65.0, 85.0], [45.0, 85.0, 65.0]]),
            basal_scale: 1.0,
            cgm_noise_sd: CGM_NOISE_SD,
        }
    }

    /// One day from 05:00 with (45, 85, 65) g at 08:00, 12:00, 18:00.
    pub fn protocol_b(basal_scale: f64) -> Self {
        ScenarioProtocol {
            name: format!("B@{basal_scale}"),
            start_clock_s: clock(5.0),
            duration_h: 24.0,
            meals: fixed_meals(&[[45.0, 85.0, 65.0]]),
            basal_scale,
            cgm_noise_sd: CGM_NOISE_SD,
        }
    }

    /// Seven days from 05:00; meals N([50, 75, 75], [3, 4, 4]) g at uniform times in
    /// [07:00, 09:00], [11:00, 13:00] and [18:00, 20:00].
    pub fn data_collection() -> Self {
        let windows = [(7.0, 9.0, 50.0, 3.0), (11.0, 13.0, 75.0, 4.0), (18.0, 20.0, 75.0, 4.0)];
        let meals = (0..7)
            .flat_map(|day| {
                windows.iter().map(move |&(lo, hi, mean, sd)| MealPlan {
                    day,
                    time: MealTime::Uniform {
                        from_s: clock(lo),
                        to_s: clock(hi),
                    },
                    size: MealSize::Normal { mean, sd },
                    announced: true,
                })
            })
            .collect();
        ScenarioProtocol {
            name: "collection".into(),
            start_clock_s: clock(5.0),
            duration_h: 7.0 * 24.0,
            meals,
            basal_scale: 1.0,
            cgm_noise_sd: CGM_NOISE_SD,
        }
    }

    pub fn end_s(&self) -> f64 {
        self.start_clock_s + self.duration_h * HOUR_S
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.basal_scale > 0.0) || !self.basal_scale.is_finite() {
            return bad("basal_scale", format!("must be > 0, got {}", self.basal_scale));
        }
        if !(self.duration_h > 0.0) {
            return bad("duration_h", format!("must be > 0, got {}", self.duration_h));
        }
        if !(self.cgm_noise_sd >= 0.0) {
            return bad("cgm_noise_sd", format!("must be >= 0, got {}", self.cgm_noise_sd));
        }
        let mut last_end = f64::NEG_INFINITY;
        for m in &self.meals {
            let (lo, hi) = m.window();
            if !(lo <= hi) || lo <= last_end {
                return bad("meals", "meal windows must be ordered and disjoint".into());
            }
            if lo < self.start_clock_s || hi >= self.end_s() {
                return bad("meals", format!("meal window [{lo}, {hi}] s outside the run"));
            }
            match m.size {
                MealSize::Fixed { grams } if !(grams >= 0.0) => {
                    return bad("meals", format!("negative meal size {grams}"));
                }
                MealSize::Normal { mean, sd } if !(mean >= 0.0 && sd >= 0.0) => {
                    return bad("meals", "meal distribution must have mean, sd >= 0".into());
                }
                _ => {}
            }
            last_end = hi;
        }
        Ok(())
    }

    /// Draws the concrete meal schedule: `(time_s, grams, announced)`, times on the grid.
    fn realize_meals<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(f64, f64, bool)> {
        self.meals
            .iter()
            .map(|m| {
                let (lo, hi) = m.window();
                let time = match m.time {
                    MealTime::Fixed { .. } => lo,
                    MealTime::Uniform { .. } => {
                        let first = (lo / PERIOD_S).ceil() as i64;
                        let last = (hi / PERIOD_S).floor() as i64;
                        rng.random_range(first..=last) as f64 * PERIOD_S
                    }
                };
                let grams = match m.size {
                    MealSize::Fixed { grams } => grams,
                    MealSize::Normal { mean, sd } => {
                        (mean + sd * rng.sample::<f64, _>(StandardNormal)).max(0.0)
                    }
                };
                (time, grams, m.announced)
            })
            .collect()
    }
}

/// What a policy sees at meal time.
#[derive(Debug, Clone)]
pub struct MealContext<'a> {
    pub index: usize,
    pub time: f64,
    pub meal_class: MealClass,
    pub carbs: f64,
    pub announced: bool,
    /// The eight CGM readings ending at `time`.
    pub preprandial: [f64; WINDOW],
    pub doses: &'a [DoseRecord],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BolusDecision {
    pub units: f64,
    /// Multiplicative perturbation applied to the policy's nominal dose, if any.
    pub perturbation: Option<f64>,
}

pub trait BolusPolicy {
    fn name(&self) -> &str;
    fn decide(&mut self, ctx: &MealContext<'_>) -> Result<BolusDecision>;
}

/// The standard calculator with the patient's CR/CF, correcting on the latest reading.
#[derive(Debug, Clone)]
pub struct CalculatorPolicy {
    pub settings: CalculatorSettings,
    pub iob: IobModel,
}

impl CalculatorPolicy {
    pub fn new(settings: CalculatorSettings) -> Self {
        CalculatorPolicy {
            settings,
            iob: IobModel::default(),
        }
    }

    fn dose(&self, ctx: &MealContext<'_>) -> Result<f64> {
        let cho = if ctx.announced { ctx.carbs } else { 0.0 };
        let on_board = iob(ctx.doses, ctx.time, &self.iob)?;
        standard_calculator(cho, ctx.preprandial[WINDOW - 1], &self.settings, on_board)
    }
}

impl BolusPolicy for CalculatorPolicy {
    fn name(&self) -> &str {
        "calculator"
    }

    fn decide(&mut self, ctx: &MealContext<'_>) -> Result<BolusDecision> {
        Ok(BolusDecision {
            units: self.dose(ctx)?,
            perturbation: None,
        })
    }
}

/// Calculator output scaled by a factor uniform in `[1 - fraction, 1 + fraction]`.
#[derive(Debug, Clone)]
pub struct PerturbedCalculatorPolicy {
    pub base: CalculatorPolicy,
    pub fraction: f64,
    rng: ChaCha8Rng,
}

impl PerturbedCalculatorPolicy {
    pub fn new(settings: CalculatorSettings, fraction: f64, seed: u64) -> Self {
        PerturbedCalculatorPolicy {
            base: CalculatorPolicy::new(settings),
            fraction,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl BolusPolicy for PerturbedCalculatorPolicy {
    fn name(&self) -> &str {
        "perturbed_calculator"
    }

    fn decide(&mut self, ctx: &MealContext<'_>) -> Result<BolusDecision> {
        let factor = self
            .rng
            .random_range(1.0 - self.fraction..=1.0 + self.fraction);
        Ok(BolusDecision {
            units: self.base.dose(ctx)? * factor,
            perturbation: Some(factor),
        })
    }
}

/// The proposed method: one predictor per meal class, recommendations seeded per meal.
#[derive(Debug, Clone)]
pub struct AdvisorPolicy {
    pub breakfast: PgPredictor<f64>,
    pub lunch_dinner: PgPredictor<f64>,
    pub config: AdvisorConfig<f64>,
    pub seed: u64,
    pub recommendations: Vec<BolusRecommendation<f64>>,
}

impl AdvisorPolicy {
    pub fn new(
        breakfast: PgPredictor<f64>,
        lunch_dinner: PgPredictor<f64>,
        config: AdvisorConfig<f64>,
        seed: u64,
    ) -> Self {
        AdvisorPolicy {
            breakfast,
            lunch_dinner,
            config,
            seed,
            recommendations: Vec::new(),
        }
    }
}

impl BolusPolicy for AdvisorPolicy {
    fn name(&self) -> &str {
        "advisor"
    }

    fn decide(&mut self, ctx: &MealContext<'_>) -> Result<BolusDecision> {
        let predictor = match ctx.meal_class {
            MealClass::Breakfast => &self.breakfast,
            MealClass::LunchDinner => &self.lunch_dinner,
        };
        let meal = match (predictor.meal_aware, ctx.announced) {
            (true, true) => Some(ctx.carbs),
            (true, false) => {
                return Err(Error::MealAwarenessMismatch {
                    meal_aware: true,
                    supplied: false,
                })
            }
            (false, _) => None,
        };
        let rec = recommend_bolus(
            predictor,
            &ctx.preprandial,
            meal,
            &self.config,
            ctx.doses,
            ctx.time,
            derive_seed(self.seed, ctx.index as u64),
        )?;
        let units = rec.final_bolus;
        self.recommendations.push(rec);
        Ok(BolusDecision {
            units,
            perturbation: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliveredBolus {
    pub time: f64,
    pub units: f64,
    pub perturbation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub patient_id: String,
    pub protocol: String,
    pub policy: String,
    pub seed: u64,
    pub cgm: GlucoseTrace,
    pub boluses: Vec<DeliveredBolus>,
    pub meals: Vec<MealEvent>,
    pub basal_u_per_h: f64,
}

impl SimulationResult {
    pub fn dose_records(&self) -> Vec<DoseRecord> {
        self.boluses
            .iter()
            .map(|b| DoseRecord {
                time: b.time,
                units: b.units,
            })
            .collect()
    }
}

/// Runs `protocol` on `patient` under `policy`. The patient starts at the fasting steady
/// state of the delivered basal rate; CGM is read every 15 minutes from the start through
/// the end, and the policy is queried at each meal with the eight readings ending there.
pub fn run_protocol(
    patient: &CohortPatient,
    protocol: &ScenarioProtocol,
    policy: &mut dyn BolusPolicy,
    seed: u64,
) -> Result<SimulationResult> {
    protocol.validate()?;
    let mut meal_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut cgm_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let schedule = protocol.realize_meals(&mut meal_rng);

    let basal = patient.basal_u_per_h * protocol.basal_scale;
    let mut vp = VirtualPatient::at_steady_state(patient.params, basal)?;
    let total_min = (protocol.duration_h * 60.0).round() as usize;
    let cgm_every = (PERIOD_S / 60.0) as usize;

    let mut readings: Vec<(f64, f64)> = Vec::with_capacity(total_min / cgm_every + 1);
    let mut boluses = Vec::new();
    let mut doses = Vec::new();
    let mut meals = Vec::new();
    let mut next_meal = 0;

    for m in 0..=total_min {
        let t = protocol.start_clock_s + 60.0 * m as f64;
        if m % cgm_every == 0 {
            readings.push((t, cgm_read(vp.glucose(), protocol.cgm_noise_sd, &mut cgm_rng)));
        }
        if m == total_min {
            break;
        }
        let mut inputs = StepInputs {
            basal_u_per_h: basal,
            ..Default::default()
        };
        if next_meal < schedule.len() && (schedule[next_meal].0 - t).abs() < 1e-6 {
            let (time, carbs, announced) = schedule[next_meal];
            if readings.len() < WINDOW {
                return Err(Error::InsufficientData(format!(
                    "meal at {time} s has only {} CGM readings before it",
                    readings.len()
                )));
            }
            let mut preprandial = [0.0; WINDOW];
            for (slot, r) in preprandial.iter_mut().zip(&readings[readings.len() - WINDOW..]) {
                *slot = r.1;
            }
            let meal_class = MealClass::from_clock_seconds(time.rem_euclid(DAY_S));
            let decision = policy.decide(&MealContext {
                index: next_meal,
                time,
                meal_class,
                carbs,
                announced,
                preprandial,
                doses: &doses,
            })?;
            if !(decision.units >= 0.0) || !decision.units.is_finite() {
                return Err(Error::NonFinite("bolus decision"));
            }
            inputs.bolus_u = decision.units;
            inputs.meal_g = carbs;
            doses.push(DoseRecord {
                time,
                units: decision.units,
            });
            boluses.push(DeliveredBolus {
                time,
                units: decision.units,
                perturbation: decision.perturbation,
            });
            meals.push(MealEvent {
                time,
                carbs,
                bolus: decision.units,
                meal_class,
            });
            next_meal += 1;
        }
        vp.step(inputs, SIM_DT_MIN)?;
    }
    if next_meal != schedule.len() {
        return Err(Error::InvalidParameter {
            name: "meals",
            reason: "meal times must fall on whole minutes".into(),
        });
    }
    Ok(SimulationResult {
        patient_id: patient.id.clone(),
        protocol: protocol.name.clone(),
        policy: policy.name().to_string(),
        seed,
        cgm: GlucoseTrace::new(readings)?,
        boluses,
        meals,
        basal_u_per_h: basal,
    })
}

/// The seven-day collection run with ±30 % perturbed calculator boluses, cut into
/// training samples.
pub fn run_data_collection(
    patient: &CohortPatient,
    seed: u64,
) -> Result<(SimulationResult, Vec<PgTrainingSample>)> {
    let mut policy = PerturbedCalculatorPolicy::new(patient.calculator, 0.3, derive_seed(seed, 7));
    let result = run_protocol(patient, &ScenarioProtocol::data_collection(), &mut policy, seed)?;
    let cut = serialize_samples(&result.cgm, &result.meals)?;
    Ok((result, cut.samples))
}

pub fn write_cgm_csv<W: Write>(w: W, result: &SimulationResult) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["time_s", "glucose"])?;
    for &(t, g) in result.cgm.samples() {
        wr.write_record([format!("{t}"), format!("{g:.4}")])?;
    }
    wr.flush().map_err(|e| Error::Serialization(e.to_string()))
}

pub fn write_boluses_csv<W: Write>(w: W, result: &SimulationResult) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["time_s", "units", "perturbation"])?;
    for b in &result.boluses {
        wr.write_record([
            format!("{}", b.time),
            format!("{:.6}", b.units),
            b.perturbation.map(|p| format!("{p:.6}")).unwrap_or_default(),
        ])?;
    }
    wr.flush().map_err(|e| Error::Serialization(e.to_string()))
}

pub fn write_meals_csv<W: Write>(w: W, result: &SimulationResult) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["time_s", "carbs", "bolus", "meal_class"])?;
    for m in &result.meals {
        wr.write_record([
            format!("{}", m.time),
            format!("{:.4}", m.carbs),
            format!("{:.6}", m.bolus),
            m.meal_class.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::Serialization(e.to_string()))
}
