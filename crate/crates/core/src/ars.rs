//! Asymmetric risk-sensitive trajectory cost.
//!
//! For a predicted trajectory `G ~ N(m, diag σ²)` the cost is
//! `L = -(2/γ) log E[exp(-(γ/2) S(G))]`, where `S` weighs excursions above the target
//! with the constant `q⁺` and excursions below it with a sigmoid schedule `q⁻(|G - G_r|)`
//! evaluated at each sampled deviation. The expectation is estimated by Monte Carlo in
//! log-space so large exponents do not overflow.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pg::PredictedTrajectory;
use crate::scalar::Scalar;

/// `Γ = [α, β, c1, c2]` of the below-target weight schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HypoSchedule<S: Scalar> {
    pub alpha: S,
    pub beta: S,
    pub c1: S,
    pub c2: S,
}

impl<S: Scalar> Default for HypoSchedule<S> {
    fn default() -> Self {
        HypoSchedule {
            alpha: S::one(),
            beta: S::lit(10.0),
            c1: S::lit(5.0),
            c2: S::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CostConfig<S: Scalar> {
    /// Risk sensitivity; negative values penalize uncertainty.
    pub gamma: S,
    pub q_plus: Vec<S>,
    pub hypo_schedule: HypoSchedule<S>,
    /// Target profile `G_r` in mg/dL.
    pub target: Vec<S>,
    /// Input weight `R` of the `R u²` penalty.
    pub input_weight: S,
    pub u_max: S,
    pub mc_samples: usize,
}

impl<S: Scalar> Default for CostConfig<S> {
    fn default() -> Self {
        let lit = |v: &[f64]| v.iter().map(|&x| S::lit(x)).collect::<Vec<S>>();
        CostConfig {
            gamma: S::lit(-2.0),
            q_plus: lit(&[0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.02, 0.02]),
            hypo_schedule: HypoSchedule::default(),
            target: lit(&[100.0, 120.0, 140.0, 160.0, 160.0, 150.0, 140.0, 140.0]),
            input_weight: S::lit(4.0),
            u_max: S::lit(15.0),
            mc_samples: 1000,
        }
    }
}

impl<S: Scalar> CostConfig<S> {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.gamma < S::zero()) {
            return bad("gamma", format!("must be negative, got {}", self.gamma));
        }
        if self.q_plus.len() != self.target.len() {
            return Err(Error::DimensionMismatch {
                expected: self.target.len(),
                got: self.q_plus.len(),
            });
        }
        if self.q_plus.iter().any(|&q| !(q > S::zero() && q.is_finite())) {
            return bad("q_plus", "entries must be finite and > 0".into());
        }
        if self.target.iter().any(|t| !t.is_finite()) {
            return bad("target", "entries must be finite".into());
        }
        let h = &self.hypo_schedule;
        if !(h.alpha > S::zero() && h.c1 > S::zero() && h.c2 > S::zero() && h.beta.is_finite()) {
            return bad("hypo_schedule", "alpha, c1 and c2 must be > 0".into());
        }
        if !(self.input_weight >= S::zero()) {
            return bad("input_weight", format!("must be >= 0, got {}", self.input_weight));
        }
        if !(self.u_max > S::zero()) || !self.u_max.is_finite() {
            return bad("u_max", format!("must be > 0, got {}", self.u_max));
        }
        if self.mc_samples == 0 {
            return bad("mc_samples", "must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CostEstimate<S: Scalar> {
    pub value: S,
    /// Delta-method standard error of `value`.
    pub mc_std_error: S,
    pub n_samples: usize,
}

/// Below-target weight `q⁺_i (c1 / (1 + exp(α(β - dev))) + c2)`.
pub fn q_minus_weight<S: Scalar>(q_plus_i: S, deviation: S, schedule: &HypoSchedule<S>) -> S {
    let s = schedule.c1 / (S::one() + (schedule.alpha * (schedule.beta - deviation)).exp());
    q_plus_i * (s + schedule.c2)
}

/// Quadratic exponent `S(g)` with `q⁺` above and `q⁻(|g - G_r|)` below the target.
pub fn sample_exponent<S: Scalar>(g: &[S], config: &CostConfig<S>) -> S {
    g.iter()
        .zip(&config.target)
        .zip(&config.q_plus)
        .fold(S::zero(), |acc, ((&gi, &ri), &qi)| {
            let dev = gi - ri;
            let w = if dev >= S::zero() {
                qi
            } else {
                q_minus_weight(qi, -dev, &config.hypo_schedule)
            };
            acc + w * dev * dev
        })
}

/// Streaming log-mean-exp with first and second moments of the rescaled weights.
struct LogMeanExp {
    max: f64,
    sum: f64,
    sum_sq: f64,
    n: usize,
}

impl LogMeanExp {
    fn new() -> Self {
        LogMeanExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
            n: 0,
        }
    }

    fn push(&mut self, e: f64) {
        self.n += 1;
        if e > self.max {
            let r = (self.max - e).exp();
            self.sum *= r;
            self.sum_sq *= r * r;
            self.max = e;
        }
        let w = (e - self.max).exp();
        self.sum += w;
        self.sum_sq += w * w;
    }

    /// `(log mean exp, relative standard error of the mean weight)`.
    fn finish(&self) -> (f64, f64) {
        let n = self.n as f64;
        let mean = self.sum / n;
        let lme = self.max + mean.ln();
        let rel_se = if self.n > 1 {
            let var = ((self.sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
            var.sqrt() / (n.sqrt() * mean)
        } else {
            0.0
        };
        (lme, rel_se)
    }
}

/// Monte-Carlo estimate of the risk-sensitive cost with independent Gaussian marginals.
pub fn estimate_ars_cost<S: Scalar, R: Rng + ?Sized>(
    traj: &PredictedTrajectory<S>,
    config: &CostConfig<S>,
    rng: &mut R,
) -> Result<CostEstimate<S>> {
    config.validate()?;
    check_trajectory(traj, config)?;
    let n = traj.len();
    let sds: Vec<S> = traj.variances.iter().map(|v| v.max(S::zero()).sqrt()).collect();
    let half_risk = -config.gamma.as_f64() / 2.0;
    let mut acc = LogMeanExp::new();
    let mut g = vec![S::zero(); n];
    for _ in 0..config.mc_samples {
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            g[i] = traj.means[i] + sds[i] * S::lit(z);
        }
        acc.push(half_risk * sample_exponent(&g, config).as_f64());
    }
    finish_estimate(acc, config)
}

fn finish_estimate<S: Scalar>(acc: LogMeanExp, config: &CostConfig<S>) -> Result<CostEstimate<S>> {
    let (lme, rel_se) = acc.finish();
    let scale = -2.0 / config.gamma.as_f64();
    let value = scale * lme;
    let se = scale * rel_se;
    if !value.is_finite() || !se.is_finite() {
        return Err(Error::NonFinite("risk-sensitive cost estimate"));
    }
    Ok(CostEstimate {
        value: S::lit(value),
        mc_std_error: S::lit(se),
        n_samples: acc.n,
    })
}

fn check_trajectory<S: Scalar>(traj: &PredictedTrajectory<S>, config: &CostConfig<S>) -> Result<()> {
    if traj.means.len() != config.target.len() || traj.variances.len() != config.target.len() {
        return Err(Error::DimensionMismatch {
            expected: config.target.len(),
            got: traj.means.len(),
        });
    }
    if traj.means.iter().chain(&traj.variances).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trajectory"));
    }
    Ok(())
}

/// Objective of the bolus problem: risk-sensitive cost plus `R u²`.
pub fn total_cost<S: Scalar, R: Rng + ?Sized>(
    traj: &PredictedTrajectory<S>,
    u: S,
    config: &CostConfig<S>,
    rng: &mut R,
) -> Result<S> {
    if !(u >= S::zero() && u <= config.u_max) {
        return Err(Error::BolusOutOfBounds {
            u: u.as_f64(),
            u_max: config.u_max.as_f64(),
        });
    }
    let est = estimate_ars_cost(traj, config, rng)?;
    Ok(est.value + config.input_weight * u * u)
}
