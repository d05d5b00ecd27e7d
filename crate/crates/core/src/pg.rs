//! Postprandial glucose model: meal episodes are cut out of a glucose trace, and one GP
//! per 15-minute step is trained on glucose increments. Predictions roll the eight
//! step models forward, feeding each predicted mean back into the autoregressive window.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit_hyperparams, Dataset, FitConfig, KernelParams, MeanMode, TrainedGp};
use crate::scalar::Scalar;

/// Readings in the autoregressive window `P_{t-7}..P_t`.
pub const WINDOW: usize = 8;
/// Prediction steps `P_{t+1}..P_{t+8}`.
pub const HORIZON: usize = 8;
/// Sampling period in seconds.
pub const PERIOD_S: f64 = 900.0;
/// Raw readings within this distance of a grid point are interpolated onto it.
pub const GRID_TOLERANCE_S: f64 = 450.0;
/// Two meals closer than this contaminate each other's postprandial window.
pub const MEAL_SEPARATION_S: f64 = HORIZON as f64 * PERIOD_S;

pub const PREDICTOR_SCHEMA: &str = "pg-predictor/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MealClass {
    Breakfast,
    LunchDinner,
}

impl MealClass {
    pub fn as_str(self) -> &'static str {
        match self {
            MealClass::Breakfast => "breakfast",
            MealClass::LunchDinner => "lunch_dinner",
        }
    }

    /// Classification by clock time: meals before 10:00 are breakfasts.
    pub fn from_clock_seconds(seconds_of_day: f64) -> Self {
        if seconds_of_day.rem_euclid(86_400.0) < 10.0 * 3600.0 {
            MealClass::Breakfast
        } else {
            MealClass::LunchDinner
        }
    }
}

impl fmt::Display for MealClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MealClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "breakfast" => Ok(MealClass::Breakfast),
            "lunch_dinner" | "lunch" | "dinner" => Ok(MealClass::LunchDinner),
            other => Err(Error::InvalidParameter {
                name: "meal_class",
                reason: format!("unknown meal class `{other}`"),
            }),
        }
    }
}

/// Timestamped glucose readings (seconds, mg/dL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlucoseTrace {
    samples: Vec<(f64, f64)>,
}

impl GlucoseTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidParameter {
                    name: "trace",
                    reason: format!("timestamps not strictly increasing at t={}", w[1].0),
                });
            }
        }
        if let Some(&(t, g)) = samples
            .iter()
            .find(|(t, g)| !t.is_finite() || !(*g > 10.0 && *g < 600.0))
        {
            return Err(Error::InvalidParameter {
                name: "trace",
                reason: format!("glucose {g} at t={t} outside (10, 600) mg/dL"),
            });
        }
        Ok(GlucoseTrace { samples })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Glucose at `t`: the exact reading if one exists, otherwise linear interpolation
    /// between the bracketing readings when the nearer one lies within
    /// [`GRID_TOLERANCE_S`] and the bracket spans at most two periods.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let s = &self.samples;
        let idx = s.partition_point(|&(ts, _)| ts < t);
        if idx < s.len() && (s[idx].0 - t).abs() < 1e-6 {
            return Some(s[idx].1);
        }
        if idx > 0 && (s[idx - 1].0 - t).abs() < 1e-6 {
            return Some(s[idx - 1].1);
        }
        if idx == 0 || idx == s.len() {
            return None;
        }
        let (t0, g0) = s[idx - 1];
        let (t1, g1) = s[idx];
        let nearest = (t - t0).min(t1 - t);
        if nearest >= GRID_TOLERANCE_S || t1 - t0 > 2.0 * PERIOD_S {
            return None;
        }
        Some(g0 + (g1 - g0) * (t - t0) / (t1 - t0))
    }

    /// The eight readings `P_{t-7}..P_t` on the 15-minute grid ending at `t`.
    pub fn preprandial_window(&self, t: f64) -> Option<[f64; WINDOW]> {
        let mut out = [0.0; WINDOW];
        for (k, slot) in out.iter_mut().enumerate() {
            let back = (WINDOW - 1 - k) as f64;
            *slot = self.value_at(t - back * PERIOD_S)?;
        }
        Some(out)
    }

    /// The eight readings `P_{t+1}..P_{t+8}`.
    pub fn postprandial_window(&self, t: f64) -> Option<[f64; HORIZON]> {
        let mut out = [0.0; HORIZON];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.value_at(t + (k + 1) as f64 * PERIOD_S)?;
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MealEvent {
    pub time: f64,
    pub carbs: f64,
    pub bolus: f64,
    pub meal_class: MealClass,
}

/// One meal episode: 2 h of history, the bolus and carbohydrate, 2 h of outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgTrainingSample {
    pub meal_class: MealClass,
    pub preprandial: [f64; WINDOW],
    pub bolus: f64,
    pub carbs: f64,
    pub postprandial: [f64; HORIZON],
}

impl PgTrainingSample {
    /// `P_{t-7}..P_{t+8}` as one sequence.
    pub fn sequence(&self) -> [f64; WINDOW + HORIZON] {
        let mut s = [0.0; WINDOW + HORIZON];
        s[..WINDOW].copy_from_slice(&self.preprandial);
        s[WINDOW..].copy_from_slice(&self.postprandial);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    InsufficientHistory,
    InsufficientFuture,
    OverlappingMeal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkippedMeal {
    pub time: f64,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SerializedSamples {
    pub samples: Vec<PgTrainingSample>,
    pub skipped: Vec<SkippedMeal>,
}

/// Cuts one training sample per meal out of `trace`. Meals without a full 2 h window on
/// both sides, or within 2 h of another meal, are skipped and reported.
pub fn serialize_samples(trace: &GlucoseTrace, events: &[MealEvent]) -> Result<SerializedSamples> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| events[a].time.total_cmp(&events[b].time));

    let mut overlapping = vec![false; events.len()];
    for w in order.windows(2) {
        if events[w[1]].time - events[w[0]].time < MEAL_SEPARATION_S {
            overlapping[w[0]] = true;
            overlapping[w[1]] = true;
        }
    }

    let mut out = SerializedSamples::default();
    for &i in &order {
        let ev = &events[i];
        let skip = |reason| {
            warn!("skipping meal at t={}: {:?}", ev.time, reason);
            SkippedMeal {
                time: ev.time,
                reason,
            }
        };
        if overlapping[i] {
            out.skipped.push(skip(SkipReason::OverlappingMeal));
            continue;
        }
        let Some(preprandial) = trace.preprandial_window(ev.time) else {
            out.skipped.push(skip(SkipReason::InsufficientHistory));
            continue;
        };
        let Some(postprandial) = trace.postprandial_window(ev.time) else {
            out.skipped.push(skip(SkipReason::InsufficientFuture));
            continue;
        };
        out.samples.push(PgTrainingSample {
            meal_class: ev.meal_class,
            preprandial,
            bolus: ev.bolus,
            carbs: ev.carbs,
            postprandial,
        });
    }
    Ok(out)
}

const SAMPLE_HEADER_PRE: [&str; WINDOW] = [
    "pre_1", "pre_2", "pre_3", "pre_4", "pre_5", "pre_6", "pre_7", "pre_8",
];
const SAMPLE_HEADER_POST: [&str; HORIZON] = [
    "post_1", "post_2", "post_3", "post_4", "post_5", "post_6", "post_7", "post_8",
];

/// Writes samples as delimited text: `meal_class, 8 preprandial, u, d, 8 postprandial`.
pub fn write_samples_csv<W: Write>(w: W, samples: &[PgTrainingSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["meal_class"];
    header.extend(SAMPLE_HEADER_PRE);
    header.extend(["u", "d"]);
    header.extend(SAMPLE_HEADER_POST);
    wtr.write_record(&header)?;
    for s in samples {
        let mut rec = vec![s.meal_class.to_string()];
        rec.extend(s.preprandial.iter().map(|v| v.to_string()));
        rec.push(s.bolus.to_string());
        rec.push(s.carbs.to_string());
        rec.extend(s.postprandial.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<PgTrainingSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 1 + WINDOW + 2 + HORIZON {
            return Err(Error::Serialization(format!(
                "row {}: expected {} fields, got {}",
                line + 1,
                1 + WINDOW + 2 + HORIZON,
                rec.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| {
                Error::Serialization(format!("row {} column {}: {e}", line + 1, i + 1))
            })
        };
        let mut pre = [0.0; WINDOW];
        for (k, v) in pre.iter_mut().enumerate() {
            *v = num(1 + k)?;
        }
        let mut post = [0.0; HORIZON];
        for (k, v) in post.iter_mut().enumerate() {
            *v = num(1 + WINDOW + 2 + k)?;
        }
        out.push(PgTrainingSample {
            meal_class: rec[0].parse()?,
            preprandial: pre,
            bolus: num(1 + WINDOW)?,
            carbs: num(2 + WINDOW)?,
            postprandial: post,
        });
    }
    Ok(out)
}

/// Per-step, per-column min/max of the glucose inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NormalizationStats<S: Scalar> {
    pub min: Vec<Vec<S>>,
    pub max: Vec<Vec<S>>,
    /// Columns with `max == min`; these normalize to the constant 0.5.
    pub degenerate: Vec<Vec<bool>>,
}

impl<S: Scalar> NormalizationStats<S> {
    fn from_columns(columns: &[Vec<Vec<S>>]) -> Self {
        let mut min = Vec::new();
        let mut max = Vec::new();
        let mut degenerate = Vec::new();
        for step in columns {
            let lo: Vec<S> = step.iter().map(|c| c.iter().copied().fold(S::infinity(), S::min)).collect();
            let hi: Vec<S> = step
                .iter()
                .map(|c| c.iter().copied().fold(S::neg_infinity(), S::max))
                .collect();
            degenerate.push(lo.iter().zip(&hi).map(|(a, b)| !(b > a)).collect());
            min.push(lo);
            max.push(hi);
        }
        NormalizationStats {
            min,
            max,
            degenerate,
        }
    }

    /// Min-max normalization; values outside the training range extrapolate linearly.
    pub fn normalize(&self, step: usize, col: usize, v: S) -> S {
        if self.degenerate[step][col] {
            return S::lit(0.5);
        }
        (v - self.min[step][col]) / (self.max[step][col] - self.min[step][col])
    }

    pub fn denormalize(&self, step: usize, col: usize, z: S) -> S {
        if self.degenerate[step][col] {
            return self.min[step][col];
        }
        self.min[step][col] + z * (self.max[step][col] - self.min[step][col])
    }

    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().flatten().any(|&d| d)
    }
}

/// Eight Gaussian marginals at 15-minute spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PredictedTrajectory<S: Scalar> {
    pub means: Vec<S>,
    pub variances: Vec<S>,
    /// Predicted increments `m_i - m_{i-1}`.
    pub increments: Vec<S>,
    pub spacing_minutes: f64,
}

impl<S: Scalar> PredictedTrajectory<S> {
    /// Deterministic trajectory (zero variance).
    pub fn exact(means: Vec<S>) -> Self {
        let n = means.len();
        PredictedTrajectory {
            increments: vec![S::zero(); n],
            variances: vec![S::zero(); n],
            means,
            spacing_minutes: PERIOD_S / 60.0,
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgTrainConfig {
    pub fit: FitConfig,
    /// Slope-prior precision, in units of `1 / var(ΔP)`; see [`train_pg_model_with`].
    pub relative_slope_precision: f64,
}

impl Default for PgTrainConfig {
    fn default() -> Self {
        PgTrainConfig {
            fit: FitConfig::default(),
            relative_slope_precision: 100.0,
        }
    }
}

/// Eight step GPs plus the normalization they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PgPredictor<S: Scalar> {
    pub schema: String,
    pub meal_class: MealClass,
    pub meal_aware: bool,
    pub norm: NormalizationStats<S>,
    pub step_models: Vec<TrainedGp<S>>,
}

pub fn train_pg_model<S: Scalar>(
    samples: &[PgTrainingSample],
    meal_aware: bool,
) -> Result<PgPredictor<S>> {
    train_pg_model_with(samples, meal_aware, &PgTrainConfig::default())
}

/// Trains the eight step models. Step `i` maps the normalized window
/// `P_{t+i-8}..P_{t+i-1}` plus `u` (and `d` when meal-aware) to `P_{t+i} - P_{t+i-1}`,
/// with a linear mean and SE kernel fitted independently per step.
///
/// The glucose-window slopes carry a zero-centered Gaussian prior whose precision is
/// `relative_slope_precision / var(ΔP)`; with as few as seven episodes the eight collinear
/// window columns are not determined by the likelihood alone. The bolus and carbohydrate
/// slopes are left free.
pub fn train_pg_model_with<S: Scalar>(
    samples: &[PgTrainingSample],
    meal_aware: bool,
    config: &PgTrainConfig,
) -> Result<PgPredictor<S>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let meal_class = samples[0].meal_class;
    if samples.iter().any(|s| s.meal_class != meal_class) {
        return Err(Error::InsufficientData(
            "samples mix meal classes".to_string(),
        ));
    }
    let seqs: Vec<[f64; WINDOW + HORIZON]> = samples.iter().map(|s| s.sequence()).collect();
    if seqs.iter().flatten().any(|v| !v.is_finite())
        || samples.iter().any(|s| !s.bolus.is_finite() || !s.carbs.is_finite())
    {
        return Err(Error::NonFinite("training samples"));
    }

    // columns[step][col] = glucose column values across samples
    let columns: Vec<Vec<Vec<S>>> = (0..HORIZON)
        .map(|step| {
            (0..WINDOW)
                .map(|col| seqs.iter().map(|q| S::lit(q[step + col])).collect())
                .collect()
        })
        .collect();
    let norm = NormalizationStats::from_columns(&columns);
    if norm.any_degenerate() {
        warn!("degenerate normalization column(s) for {meal_class}; mapped to 0.5");
    }

    let dim = WINDOW + if meal_aware { 2 } else { 1 };
    let u_vals: Vec<f64> = samples.iter().map(|s| s.bolus).collect();
    let d_vals: Vec<f64> = samples.iter().map(|s| s.carbs).collect();

    let mut step_models = Vec::with_capacity(HORIZON);
    for step in 0..HORIZON {
        let inputs: Vec<Vec<S>> = samples
            .iter()
            .zip(&seqs)
            .map(|(s, q)| {
                let mut z: Vec<S> = (0..WINDOW)
                    .map(|col| norm.normalize(step, col, S::lit(q[step + col])))
                    .collect();
                z.push(S::lit(s.bolus));
                if meal_aware {
                    z.push(S::lit(s.carbs));
                }
                z
            })
            .collect();
        let targets: Vec<S> = seqs
            .iter()
            .map(|q| S::lit(q[WINDOW + step] - q[WINDOW + step - 1]))
            .collect();
        let dataset = Dataset::new(inputs, targets)?;

        let var_y = variance(&dataset.targets.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
        let sig = var_y.max(1.0);
        let mut ls = vec![S::one(); WINDOW];
        ls.push(S::lit((2.0 * variance(&u_vals).sqrt()).max(0.5)));
        if meal_aware {
            ls.push(S::lit((2.0 * variance(&d_vals).sqrt()).max(2.0)));
        }
        let init = KernelParams {
            signal_variance: S::lit(sig),
            length_scales: ls,
            noise_variance: S::lit(0.1 * sig),
        };
        let mut fit = config.fit.clone();
        fit.slope_precision = vec![config.relative_slope_precision / sig; WINDOW];
        fit.slope_precision.resize(dim, 0.0);
        let gp = fit_hyperparams(&dataset, &init, MeanMode::Linear, &fit)
            .map_err(|e| Error::FitFailed(format!("step {}: {e}", step + 1)))?;
        debug_assert_eq!(gp.dim(), dim);
        step_models.push(gp);
    }

    Ok(PgPredictor {
        schema: PREDICTOR_SCHEMA.to_string(),
        meal_class,
        meal_aware,
        norm,
        step_models,
    })
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

impl<S: Scalar> PgPredictor<S> {
    pub fn input_dim(&self) -> usize {
        WINDOW + if self.meal_aware { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != PREDICTOR_SCHEMA {
            return Err(Error::Serialization(format!(
                "unsupported predictor schema `{}`",
                self.schema
            )));
        }
        if self.step_models.len() != HORIZON {
            return Err(Error::DimensionMismatch {
                expected: HORIZON,
                got: self.step_models.len(),
            });
        }
        if let Some(m) = self.step_models.iter().find(|m| m.dim() != self.input_dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: m.dim(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    /// Eight-step rollout feeding predicted means back into the window. The variance
    /// at each step is that step model's predictive variance.
    pub fn predict_trajectory(
        &self,
        preprandial: &[S],
        u: S,
        d: Option<S>,
    ) -> Result<PredictedTrajectory<S>> {
        if preprandial.len() != WINDOW {
            return Err(Error::DimensionMismatch {
                expected: WINDOW,
                got: preprandial.len(),
            });
        }
        if d.is_some() != self.meal_aware {
            return Err(Error::MealAwarenessMismatch {
                meal_aware: self.meal_aware,
                supplied: d.is_some(),
            });
        }
        if preprandial.iter().any(|v| !v.is_finite()) || !u.is_finite() {
            return Err(Error::NonFinite("prediction inputs"));
        }
        let mut window: Vec<S> = preprandial.to_vec();
        let mut prev = window[WINDOW - 1];
        let mut means = Vec::with_capacity(HORIZON);
        let mut variances = Vec::with_capacity(HORIZON);
        let mut increments = Vec::with_capacity(HORIZON);
        let mut z = Vec::with_capacity(self.input_dim());
        for (step, gp) in self.step_models.iter().enumerate() {
            z.clear();
            z.extend(
                window
                    .iter()
                    .enumerate()
                    .map(|(col, &v)| self.norm.normalize(step, col, v)),
            );
            z.push(u);
            if let Some(d) = d {
                z.push(d);
            }
            let (delta, var) = gp.posterior_predict(&z)?;
            let m = prev + delta;
            if !m.is_finite() || !var.is_finite() {
                return Err(Error::NonFinite("trajectory rollout"));
            }
            means.push(m);
            variances.push(var);
            increments.push(delta);
            window.remove(0);
            window.push(m);
            prev = m;
        }
        Ok(PredictedTrajectory {
            means,
            variances,
            increments,
            spacing_minutes: PERIOD_S / 60.0,
        })
    }
}
