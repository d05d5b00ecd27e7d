//! Gaussian-process regression with a squared-exponential (ARD) kernel and an optional
//! linear mean function.
//!
//! Hyperparameters are fitted by minimizing the negative log marginal likelihood over
//! log-transformed kernel parameters with restarted simplex descent. When the mean is
//! linear, its coefficients are profiled out exactly for every candidate kernel: for
//! fixed kernel parameters the likelihood is Gaussian in `(a, b)` and the maximizer is
//! the generalized least-squares solution.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, JitterPolicy, Matrix};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::scalar::Scalar;

pub const GP_SCHEMA: &str = "gp/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct KernelParams<S: Scalar> {
    pub signal_variance: S,
    pub length_scales: Vec<S>,
    pub noise_variance: S,
}

impl<S: Scalar> KernelParams<S> {
    pub fn isotropic(signal_variance: S, length_scale: S, dim: usize, noise_variance: S) -> Self {
        KernelParams {
            signal_variance,
            length_scales: vec![length_scale; dim],
            noise_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.length_scales.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.length_scales.len(),
            });
        }
        let positive = |v: S| v.is_finite() && v > S::zero();
        if !positive(self.signal_variance) {
            return Err(Error::InvalidParameter {
                name: "signal_variance",
                reason: format!("must be finite and > 0, got {}", self.signal_variance),
            });
        }
        if let Some(l) = self.length_scales.iter().find(|&&l| !positive(l)) {
            return Err(Error::InvalidParameter {
                name: "length_scales",
                reason: format!("must be finite and > 0, got {l}"),
            });
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= S::zero()) {
            return Err(Error::InvalidParameter {
                name: "noise_variance",
                reason: format!("must be finite and >= 0, got {}", self.noise_variance),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    Zero,
    Linear,
}

/// `m(x) = aᵀx + b`, or identically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LinearMean<S: Scalar> {
    pub mode: MeanMode,
    pub slope: Vec<S>,
    pub intercept: S,
}

impl<S: Scalar> LinearMean<S> {
    pub fn zero() -> Self {
        LinearMean {
            mode: MeanMode::Zero,
            slope: Vec::new(),
            intercept: S::zero(),
        }
    }

    pub fn linear(slope: Vec<S>, intercept: S) -> Self {
        LinearMean {
            mode: MeanMode::Linear,
            slope,
            intercept,
        }
    }

    pub fn eval(&self, x: &[S]) -> S {
        match self.mode {
            MeanMode::Zero => S::zero(),
            MeanMode::Linear => dot(&self.slope, x) + self.intercept,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.mode == MeanMode::Linear && self.slope.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.slope.len(),
            });
        }
        if !self.intercept.is_finite() || self.slope.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mean parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<S: Scalar> {
    pub inputs: Vec<Vec<S>>,
    pub targets: Vec<S>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(inputs: Vec<Vec<S>>, targets: Vec<S>) -> Result<Self> {
        let d = Dataset { inputs, targets };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.inputs.len() != self.targets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.inputs.len(),
                got: self.targets.len(),
            });
        }
        let dim = self.inputs[0].len();
        for row in &self.inputs {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset inputs"));
            }
        }
        if self.targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset targets"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

#[inline]
fn scaled_sq_dist<S: Scalar>(x: &[S], y: &[S], length_scales: &[S]) -> S {
    x.iter()
        .zip(y)
        .zip(length_scales)
        .fold(S::zero(), |acc, ((&a, &b), &l)| {
            let d = (a - b) / l;
            acc + d * d
        })
}

#[inline]
fn se_unchecked<S: Scalar>(x: &[S], y: &[S], params: &KernelParams<S>) -> S {
    params.signal_variance * (S::lit(-0.5) * scaled_sq_dist(x, y, &params.length_scales)).exp()
}

/// Squared-exponential covariance `σ_f² exp(-½ (x-x')ᵀ Ω⁻¹ (x-x'))`, plus the noise
/// variance when `include_noise` is set and the two points are identical.
pub fn se_kernel<S: Scalar>(
    x: &[S],
    x_prime: &[S],
    params: &KernelParams<S>,
    include_noise: bool,
) -> Result<S> {
    if x.len() != x_prime.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: x_prime.len(),
        });
    }
    if x.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: x.len(),
        });
    }
    if x.iter().chain(x_prime).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel input"));
    }
    let mut k = se_unchecked(x, x_prime, params);
    if include_noise && x == x_prime {
        k = k + params.noise_variance;
    }
    Ok(k)
}

/// Gram matrix of the noisy process, `K + σ_ω² I`.
fn noisy_gram<S: Scalar>(inputs: &[Vec<S>], params: &KernelParams<S>) -> Matrix<S> {
    let n = inputs.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k.set(i, i, params.signal_variance + params.noise_variance);
        for j in 0..i {
            let v = se_unchecked(&inputs[i], &inputs[j], params);
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

fn half_log_2pi<S: Scalar>() -> S {
    S::lit(0.5 * (2.0 * PI).ln())
}

fn nlml_from_factor<S: Scalar>(chol: &Cholesky<S>, residual: &[S]) -> (S, Vec<S>) {
    let alpha = chol.solve(residual);
    let n = S::lit(residual.len() as f64);
    let quad = dot(residual, &alpha);
    let value = S::lit(0.5) * quad + S::lit(0.5) * chol.log_det() + n * half_log_2pi();
    (value, alpha)
}

/// Negative log marginal likelihood `-log p(Y | X, θ)`.
pub fn nlml<S: Scalar>(
    dataset: &Dataset<S>,
    params: &KernelParams<S>,
    mean: &LinearMean<S>,
) -> Result<S> {
    nlml_with_jitter(dataset, params, mean, JitterPolicy::default())
}

pub fn nlml_with_jitter<S: Scalar>(
    dataset: &Dataset<S>,
    params: &KernelParams<S>,
    mean: &LinearMean<S>,
    jitter: JitterPolicy,
) -> Result<S> {
    dataset.validate()?;
    params.validate(dataset.dim())?;
    mean.validate(dataset.dim())?;
    let chol = Cholesky::factor(&noisy_gram(&dataset.inputs, params), jitter)?;
    let residual: Vec<S> = dataset
        .inputs
        .iter()
        .zip(&dataset.targets)
        .map(|(x, &y)| y - mean.eval(x))
        .collect();
    Ok(nlml_from_factor(&chol, &residual).0)
}

/// Fitted GP: hyperparameters, mean, training data and the cached factorization.
/// Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    bound = "",
    into = "GpDocument<S>",
    try_from = "GpDocument<S>"
)]
pub struct TrainedGp<S: Scalar> {
    params: KernelParams<S>,
    mean: LinearMean<S>,
    dataset: Dataset<S>,
    jitter_policy: JitterPolicy,
    chol: Cholesky<S>,
    alpha: Vec<S>,
}

impl<S: Scalar> TrainedGp<S> {
    pub fn new(
        dataset: Dataset<S>,
        params: KernelParams<S>,
        mean: LinearMean<S>,
        jitter_policy: JitterPolicy,
    ) -> Result<Self> {
        dataset.validate()?;
        params.validate(dataset.dim())?;
        mean.validate(dataset.dim())?;
        let chol = Cholesky::factor(&noisy_gram(&dataset.inputs, &params), jitter_policy)?;
        let residual: Vec<S> = dataset
            .inputs
            .iter()
            .zip(&dataset.targets)
            .map(|(x, &y)| y - mean.eval(x))
            .collect();
        let alpha = chol.solve(&residual);
        Ok(TrainedGp {
            params,
            mean,
            dataset,
            jitter_policy,
            chol,
            alpha,
        })
    }

    pub fn params(&self) -> &KernelParams<S> {
        &self.params
    }

    pub fn mean(&self) -> &LinearMean<S> {
        &self.mean
    }

    pub fn dataset(&self) -> &Dataset<S> {
        &self.dataset
    }

    pub fn chol(&self) -> &Cholesky<S> {
        &self.chol
    }

    pub fn alpha(&self) -> &[S] {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    /// Negative log marginal likelihood from the cached factorization.
    pub fn nlml(&self) -> S {
        let residual: Vec<S> = self
            .dataset
            .inputs
            .iter()
            .zip(&self.dataset.targets)
            .map(|(x, &y)| y - self.mean.eval(x))
            .collect();
        nlml_from_factor(&self.chol, &residual).0
    }

    /// Posterior mean and variance of the latent function at `x_star`.
    pub fn posterior_predict(&self, x_star: &[S]) -> Result<(S, S)> {
        if x_star.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x_star.len(),
            });
        }
        if x_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction input"));
        }
        let k_star: Vec<S> = self
            .dataset
            .inputs
            .iter()
            .map(|xi| se_unchecked(x_star, xi, &self.params))
            .collect();
        let mean = self.mean.eval(x_star) + dot(&k_star, &self.alpha);
        let v = self.chol.solve_lower(&k_star);
        let prior = self.params.signal_variance;
        let var = prior - dot(&v, &v);
        let tol = S::lit(10.0) * self.chol.jitter() + S::lit(1e4 * S::eps_f64()) * prior;
        if var < -tol {
            return Err(Error::NegativeVariance(var.as_f64()));
        }
        Ok((mean, var.max(S::zero())))
    }
}

/// Self-describing document form of a [`TrainedGp`]; the factorization is recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GpDocument<S: Scalar> {
    pub schema: String,
    pub params: KernelParams<S>,
    pub mean: LinearMean<S>,
    pub dataset: Dataset<S>,
    #[serde(default)]
    pub jitter: Option<JitterDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterDoc {
    pub start: f64,
    pub max: f64,
}

impl<S: Scalar> From<TrainedGp<S>> for GpDocument<S> {
    fn from(gp: TrainedGp<S>) -> Self {
        GpDocument {
            schema: GP_SCHEMA.to_string(),
            params: gp.params,
            mean: gp.mean,
            dataset: gp.dataset,
            jitter: Some(JitterDoc {
                start: gp.jitter_policy.start,
                max: gp.jitter_policy.max,
            }),
        }
    }
}

impl<S: Scalar> TryFrom<GpDocument<S>> for TrainedGp<S> {
    type Error = Error;

    fn try_from(doc: GpDocument<S>) -> Result<Self> {
        if doc.schema != GP_SCHEMA {
            return Err(Error::Serialization(format!(
                "unsupported GP schema `{}`",
                doc.schema
            )));
        }
        let jitter = doc.jitter.map_or_else(JitterPolicy::default, |j| JitterPolicy {
            start: j.start,
            max: j.max,
        });
        TrainedGp::new(doc.dataset, doc.params, doc.mean, jitter)
    }
}

/// Options for [`fit_hyperparams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of simplex runs; the first starts at the supplied initial parameters, the
    /// rest at a Latin-hypercube pattern around it.
    pub restarts: usize,
    /// Spacing of the restart pattern, in natural-log units.
    pub restart_spread: f64,
    pub simplex: NelderMeadConfig,
    pub jitter: JitterPolicy,
    /// Log-parameters are confined to `init ± log_box`.
    pub log_box: f64,
    /// Noise variance lower bound, relative to the target variance.
    pub noise_floor: f64,
    /// Gaussian prior precision on each linear-mean slope. Empty means plain maximum
    /// likelihood; otherwise one entry per input column.
    #[serde(default)]
    pub slope_precision: Vec<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 5,
            restart_spread: 1.0,
            simplex: NelderMeadConfig::default(),
            jitter: JitterPolicy::default(),
            log_box: 12.0,
            noise_floor: 1e-8,
            slope_precision: Vec::new(),
        }
    }
}

impl Serialize for JitterPolicy {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        JitterDoc {
            start: self.start,
            max: self.max,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for JitterPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = JitterDoc::deserialize(d)?;
        Ok(JitterPolicy {
            start: j.start,
            max: j.max,
        })
    }
}

/// Outcome of a hyperparameter fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<S> {
    /// Objective (nlml plus any slope prior) at the initial parameters.
    pub initial_objective: S,
    pub final_objective: S,
    pub initial_nlml: S,
    pub final_nlml: S,
    pub evals: usize,
    /// Best objective seen so far after each simplex iteration, across all restarts.
    pub history: Vec<S>,
    /// Final objective of each restart.
    pub restart_values: Vec<S>,
}

struct Objective<'a, S: Scalar> {
    dataset: &'a Dataset<S>,
    mean_mode: MeanMode,
    config: &'a FitConfig,
    center: Vec<S>,
    noise_floor: S,
}

struct Evaluated<S: Scalar> {
    objective: S,
    nlml: S,
    params: KernelParams<S>,
    mean: LinearMean<S>,
}

impl<S: Scalar> Objective<'_, S> {
    fn unpack(&self, theta: &[S]) -> KernelParams<S> {
        let d = self.dataset.dim();
        KernelParams {
            signal_variance: theta[0].exp(),
            length_scales: theta[1..=d].iter().map(|t| t.exp()).collect(),
            noise_variance: theta[d + 1].exp(),
        }
    }

    fn feasible(&self, theta: &[S]) -> bool {
        let bound = S::lit(self.config.log_box);
        let inside = theta
            .iter()
            .zip(&self.center)
            .all(|(&t, &c)| t.is_finite() && (t - c).abs() <= bound);
        inside && theta[theta.len() - 1].exp() >= self.noise_floor
    }

    fn evaluate(&self, theta: &[S]) -> Option<Evaluated<S>> {
        if !self.feasible(theta) {
            return None;
        }
        let params = self.unpack(theta);
        let chol = Cholesky::factor(&noisy_gram(&self.dataset.inputs, &params), self.config.jitter).ok()?;
        let mean = match self.mean_mode {
            MeanMode::Zero => LinearMean::zero(),
            MeanMode::Linear => self.profile_mean(&chol)?,
        };
        let residual: Vec<S> = self
            .dataset
            .inputs
            .iter()
            .zip(&self.dataset.targets)
            .map(|(x, &y)| y - mean.eval(x))
            .collect();
        let (nl, _) = nlml_from_factor(&chol, &residual);
        let penalty = mean
            .slope
            .iter()
            .zip(&self.config.slope_precision)
            .fold(S::zero(), |acc, (&a, &l)| acc + S::lit(0.5 * l) * a * a);
        let objective = nl + penalty;
        objective.is_finite().then_some(Evaluated {
            objective,
            nlml: nl,
            params,
            mean,
        })
    }

    /// Generalized least squares for `(a, b)` given the factorization of the noisy Gram
    /// matrix: solves `(HᵀK⁻¹H + Λ) β = HᵀK⁻¹Y` with `H = [X 1]`.
    fn profile_mean(&self, chol: &Cholesky<S>) -> Option<LinearMean<S>> {
        let n = self.dataset.len();
        let d = self.dataset.dim();
        let p = d + 1;
        // columns of L⁻¹H
        let cols: Vec<Vec<S>> = (0..p)
            .map(|j| {
                let h: Vec<S> = (0..n)
                    .map(|i| if j < d { self.dataset.inputs[i][j] } else { S::one() })
                    .collect();
                chol.solve_lower(&h)
            })
            .collect();
        let c = chol.solve_lower(&self.dataset.targets);
        let lambda = |j: usize| S::lit(self.config.slope_precision.get(j).copied().unwrap_or(0.0));
        let gram = Matrix::from_fn(p, p, |i, j| {
            let v = dot(&cols[i], &cols[j]);
            if i == j && i < d {
                v + lambda(i)
            } else {
                v
            }
        });
        let rhs: Vec<S> = cols.iter().map(|col| dot(col, &c)).collect();
        // rank-deficient designs (N <= D) fall back on the jitter schedule
        let policy = JitterPolicy {
            start: 1e-12,
            max: 1e-2,
        };
        let f = Cholesky::factor(&gram, policy).ok()?;
        let beta = f.solve(&rhs);
        if beta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(LinearMean::linear(beta[..d].to_vec(), beta[d]))
    }
}

fn target_variance<S: Scalar>(targets: &[S]) -> f64 {
    let n = targets.len() as f64;
    let mean = targets.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    targets
        .iter()
        .map(|v| (v.as_f64() - mean).powi(2))
        .sum::<f64>()
        / n
}

/// Fits kernel (and mean) hyperparameters; see [`fit_hyperparams_report`].
pub fn fit_hyperparams<S: Scalar>(
    dataset: &Dataset<S>,
    init: &KernelParams<S>,
    mean_mode: MeanMode,
    config: &FitConfig,
) -> Result<TrainedGp<S>> {
    fit_hyperparams_report(dataset, init, mean_mode, config).map(|(gp, _)| gp)
}

/// Minimizes the negative log marginal likelihood (plus the optional slope prior) with
/// deterministic restarts. Returns the fitted model and a report of the descent.
pub fn fit_hyperparams_report<S: Scalar>(
    dataset: &Dataset<S>,
    init: &KernelParams<S>,
    mean_mode: MeanMode,
    config: &FitConfig,
) -> Result<(TrainedGp<S>, FitReport<S>)> {
    dataset.validate()?;
    init.validate(dataset.dim())?;
    let d = dataset.dim();
    let prior = &config.slope_precision;
    if !(prior.is_empty() || prior.len() == d) || prior.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter {
            name: "slope_precision",
            reason: format!("expected 0 or {d} finite non-negative entries, got {prior:?}"),
        });
    }

    let var_y = target_variance(&dataset.targets);
    let scale = if var_y > 0.0 { var_y } else { 1.0 };
    let noise_floor = S::lit(config.noise_floor * scale).max(S::min_positive_value());
    let init_noise = init.noise_variance.max(noise_floor);

    let mut center = Vec::with_capacity(d + 2);
    center.push(init.signal_variance.ln());
    center.extend(init.length_scales.iter().map(|l| l.ln()));
    center.push(init_noise.ln());

    let objective = Objective {
        dataset,
        mean_mode,
        config,
        center: center.clone(),
        noise_floor,
    };

    let initial = objective
        .evaluate(&center)
        .ok_or_else(|| Error::FitFailed("objective not finite at initial parameters".into()))?;

    let starts = restart_points(&center, config.restarts.max(1), config.restart_spread);
    let mut history = vec![initial.objective];
    let mut evals = 1usize;
    let mut restart_values = Vec::with_capacity(starts.len());
    let mut best_theta = center.clone();
    let mut best_value = initial.objective;

    for start in &starts {
        let start = clamp_into_box(start, &center, config.log_box, noise_floor);
        let result = nelder_mead(
            |theta: &[S]| objective.evaluate(theta).map_or(S::infinity(), |e| e.objective),
            &start,
            &config.simplex,
        );
        evals += result.evals;
        restart_values.push(result.value);
        let mut running = *history.last().expect("history seeded");
        for &v in &result.best_history {
            running = running.min(v);
            history.push(running);
        }
        if result.value < best_value {
            best_value = result.value;
            best_theta = result.x;
        }
    }
    let fitted = objective
        .evaluate(&best_theta)
        .ok_or_else(|| Error::FitFailed("all restarts failed to produce a finite nlml".into()))?;
    let gp = TrainedGp::new(dataset.clone(), fitted.params, fitted.mean, config.jitter)?;
    let report = FitReport {
        initial_objective: initial.objective,
        final_objective: fitted.objective,
        initial_nlml: initial.nlml,
        final_nlml: fitted.nlml,
        evals,
        history,
        restart_values,
    };
    Ok((gp, report))
}

/// `k` starting points: the center itself, then a Latin-hypercube pattern whose column
/// `j` visits the levels `-2..=2` (times `spread`) in the order `(k + 2j) mod 5`.
fn restart_points<S: Scalar>(center: &[S], k: usize, spread: f64) -> Vec<Vec<S>> {
    let mut out = vec![center.to_vec()];
    for r in 1..k {
        let p = center
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let level = ((r - 1 + 2 * j + 1) % 5) as f64 - 2.0;
                c + S::lit(level * spread)
            })
            .collect();
        out.push(p);
    }
    out
}

fn clamp_into_box<S: Scalar>(p: &[S], center: &[S], log_box: f64, noise_floor: S) -> Vec<S> {
    let b = S::lit(log_box * 0.999);
    let mut q: Vec<S> = p
        .iter()
        .zip(center)
        .map(|(&v, &c)| v.max(c - b).min(c + b))
        .collect();
    let last = q.len() - 1;
    q[last] = q[last].max(noise_floor.ln() + S::lit(1e-9));
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(dim: usize, noise: f64) -> KernelParams<f64> {
        KernelParams::isotropic(1.0, 1.0, dim, noise)
    }

    #[test]
    fn kernel_at_same_point_adds_noise() {
        let p = unit(2, 0.1);
        let k = se_kernel(&[0.3, 0.4], &[0.3, 0.4], &p, true).unwrap();
        assert!((k - 1.1).abs() < 1e-15);
        let k = se_kernel(&[0.3, 0.4], &[0.3, 0.4], &p, false).unwrap();
        assert!((k - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_unit_distance() {
        let k = se_kernel(&[0.0], &[1.0], &unit(1, 0.0), false).unwrap();
        assert!((k - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn kernel_decays_to_zero() {
        let k = se_kernel(&[0.0], &[1e3], &unit(1, 0.0), false).unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn kernel_rejects_bad_input() {
        let p = unit(2, 0.0);
        assert!(matches!(
            se_kernel(&[0.0, 1.0], &[0.0], &p, false),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            se_kernel(&[0.0, f64::NAN], &[0.0, 1.0], &p, false),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn nlml_single_point_closed_form() {
        let y = 1.7;
        let (sf2, sn2) = (0.8f64, 0.3f64);
        let ds = Dataset::new(vec![vec![0.2]], vec![y]).unwrap();
        let p = KernelParams::isotropic(sf2, 0.5, 1, sn2);
        let v = nlml(&ds, &p, &LinearMean::zero()).unwrap();
        let s = sf2 + sn2;
        let expect = 0.5 * (y * y / s + s.ln() + (2.0 * PI).ln());
        assert!((v - expect).abs() < 1e-8, "{v} vs {expect}");
    }

    #[test]
    fn nlml_zero_targets_is_log_det_term() {
        let ds = Dataset::new(vec![vec![0.0], vec![0.5], vec![2.0]], vec![0.0; 3]).unwrap();
        let p = KernelParams::isotropic(1.0, 0.7, 1, 0.1);
        let v = nlml(&ds, &p, &LinearMean::zero()).unwrap();
        let gp = TrainedGp::new(ds, p, LinearMean::zero(), JitterPolicy::default()).unwrap();
        let expect = 0.5 * gp.chol().log_det() + 1.5 * (2.0 * PI).ln();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn fit_decreases_nlml_and_interpolates_single_point() {
        let ds = Dataset::new(vec![vec![0.5f64]], vec![2.0]).unwrap();
        let gp = TrainedGp::new(
            ds,
            KernelParams::isotropic(1.0, 1.0, 1, 0.0),
            LinearMean::zero(),
            JitterPolicy::default(),
        )
        .unwrap();
        let (m, v) = gp.posterior_predict(&[0.5]).unwrap();
        assert!((m - 2.0).abs() < 1e-8);
        assert!(v.abs() < 1e-8);
    }

    #[test]
    fn constant_targets_shrink_overshooting_signal_variance() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.5]).collect();
        let ds = Dataset::new(xs, vec![0.3; 8]).unwrap();
        let init = KernelParams::isotropic(50.0, 1.0, 1, 0.01);
        let (gp, report) =
            fit_hyperparams_report(&ds, &init, MeanMode::Zero, &FitConfig::default()).unwrap();
        assert!(gp.params().signal_variance < 50.0);
        assert!(report.final_nlml <= report.initial_nlml);
        // grid oracle over σ_f² with the other parameters at their fitted values
        let mut grid_best = f64::INFINITY;
        for k in -40..=20 {
            let mut p = gp.params().clone();
            p.signal_variance = 10f64.powf(k as f64 / 10.0);
            grid_best = grid_best.min(nlml(&ds, &p, &LinearMean::zero()).unwrap());
        }
        assert!(report.final_nlml <= grid_best + 1e-3);
    }

    #[test]
    fn history_is_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random::<f64>() * 4.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0].sin() + 0.05 * rng.random::<f64>()).collect();
        let ds = Dataset::new(xs, ys).unwrap();
        let (_, report) = fit_hyperparams_report(
            &ds,
            &unit(1, 0.1),
            MeanMode::Linear,
            &FitConfig::default(),
        )
        .unwrap();
        for w in report.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(report.final_nlml <= report.initial_nlml);
    }

    #[test]
    fn profiled_linear_mean_recovers_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0] - 0.5 * x[1] + 3.0).collect();
        let ds = Dataset::new(xs, ys).unwrap();
        let gp = fit_hyperparams(
            &ds,
            &KernelParams::isotropic(1.0, 1.0, 2, 0.1),
            MeanMode::Linear,
            &FitConfig::default(),
        )
        .unwrap();
        let (m, _) = gp.posterior_predict(&[10.0, -10.0]).unwrap();
        assert!((m - (20.0 + 5.0 + 3.0)).abs() < 1e-3, "{m}");
    }

    #[test]
    fn slope_prior_only_shrinks_penalized_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..15)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x[0] + 3.0 * x[1]).collect();
        let ds = Dataset::new(xs, ys).unwrap();
        let init = KernelParams::isotropic(1.0, 1.0, 2, 0.1);
        let config = FitConfig {
            slope_precision: vec![1e6, 0.0],
            ..FitConfig::default()
        };
        let gp = fit_hyperparams(&ds, &init, MeanMode::Linear, &config).unwrap();
        let slope = &gp.mean().slope;
        assert!(slope[0].abs() < 0.05, "{slope:?}");
        assert!((slope[1] - 3.0).abs() < 0.5, "{slope:?}");

        let bad = FitConfig {
            slope_precision: vec![1.0],
            ..FitConfig::default()
        };
        assert!(fit_hyperparams(&ds, &init, MeanMode::Linear, &bad).is_err());
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let ds = Dataset::new(vec![vec![0.0f64], vec![1.0]], vec![1.0, -1.0]).unwrap();
        let gp = TrainedGp::new(
            ds,
            KernelParams::isotropic(2.0, 0.5, 1, 0.01),
            LinearMean::linear(vec![0.5], 1.0),
            JitterPolicy::default(),
        )
        .unwrap();
        let (m, v) = gp.posterior_predict(&[1e3]).unwrap();
        assert!((m - 501.0).abs() < 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn prediction_dimension_checked() {
        let ds = Dataset::new(vec![vec![0.0, 1.0]], vec![1.0]).unwrap();
        let gp = TrainedGp::new(ds, unit(2, 0.1), LinearMean::zero(), JitterPolicy::default())
            .unwrap();
        assert!(gp.posterior_predict(&[0.0]).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            Dataset::<f64>::new(vec![], vec![]),
            Err(Error::EmptyDataset)
        ));
        assert!(Dataset::new(vec![vec![0.0]], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(vec![vec![f64::INFINITY]], vec![1.0]).is_err());
    }

    #[test]
    fn document_round_trip_recomputes_factor() {
        let ds = Dataset::new(vec![vec![0.0], vec![0.4], vec![1.1]], vec![0.2, 0.9, -0.3]).unwrap();
        let gp = TrainedGp::new(
            ds,
            KernelParams::isotropic(1.3, 0.6, 1, 0.05),
            LinearMean::linear(vec![0.1], 0.2),
            JitterPolicy::default(),
        )
        .unwrap();
        let text = serde_json::to_string(&gp).unwrap();
        assert!(text.contains("\"schema\":\"gp/v1\""));
        let back: TrainedGp<f64> = serde_json::from_str(&text).unwrap();
        for x in [0.1, 0.7, 3.0] {
            let a = gp.posterior_predict(&[x]).unwrap();
            let b = back.posterior_predict(&[x]).unwrap();
            assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn single_precision_prediction() {
        let ds = Dataset::new(vec![vec![0.0f32], vec![1.0]], vec![1.0, 2.0]).unwrap();
        let gp = TrainedGp::new(
            ds,
            KernelParams::isotropic(1.0f32, 1.0, 1, 0.01),
            LinearMean::zero(),
            JitterPolicy::default(),
        )
        .unwrap();
        let (m, v) = gp.posterior_predict(&[0.0]).unwrap();
        assert!((m - 1.0).abs() < 0.05);
        assert!(v >= 0.0);
    }
}
