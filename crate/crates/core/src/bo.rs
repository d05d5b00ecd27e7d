//! One-dimensional Bayesian optimization over the bolus range.
//!
//! The surrogate is a zero-mean SE Gaussian process on `u / u_max` fitted to
//! standardized costs; the next input maximizes expected improvement over a uniform grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit_hyperparams, Dataset, FitConfig, KernelParams, MeanMode, TrainedGp};
use crate::optim::NelderMeadConfig;
use crate::scalar::Scalar;
use crate::special::ei_kernel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Observation<S: Scalar> {
    /// 0 for the initial design, then 1..=M.
    pub iteration: usize,
    pub u: S,
    pub cost: S,
    /// Expected improvement that selected this point; absent for the initial design.
    pub ei: Option<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub iterations: usize,
    pub initial_points: usize,
    pub grid_size: usize,
    pub fit: FitConfig,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            iterations: 25,
            initial_points: 8,
            grid_size: 512,
            fit: FitConfig {
                restarts: 2,
                simplex: NelderMeadConfig {
                    max_evals: 300,
                    f_tol: 1e-5,
                    x_tol: 1e-4,
                    initial_step: 0.5,
                },
                ..FitConfig::default()
            },
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if self.initial_points < 2 {
            return bad("initial_points", "need at least 2");
        }
        if self.grid_size < 2 {
            return bad("grid_size", "need at least 2");
        }
        if self.fit.restarts == 0 {
            return bad("fit.restarts", "need at least 1");
        }
        Ok(())
    }
}

/// `n` equidistant points on `[lo, hi]`, both endpoints included.
pub fn init_design<S: Scalar>(lo: S, hi: S, n: usize) -> Result<Vec<S>> {
    if n < 2 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: format!("need at least 2 points, got {n}"),
        });
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter {
            name: "bounds",
            reason: format!("need finite lo < hi, got [{lo}, {hi}]"),
        });
    }
    let last = S::lit((n - 1) as f64);
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * S::lit(i as f64) / last
            }
        })
        .collect())
}

/// Fitted surrogate mapping `u` to a predictive cost distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate<S: Scalar> {
    gp: TrainedGp<S>,
    u_max: S,
    offset: S,
    scale: S,
}

impl<S: Scalar> Surrogate<S> {
    /// Fits the surrogate. `warm_start` (standardized-unit kernel parameters from a
    /// previous fit) seeds the first simplex run.
    pub fn fit(
        observations: &[Observation<S>],
        u_max: S,
        config: &FitConfig,
        warm_start: Option<&KernelParams<S>>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = S::lit(observations.len() as f64);
        let offset = observations.iter().map(|o| o.cost).sum::<S>() / n;
        let var = observations
            .iter()
            .map(|o| (o.cost - offset) * (o.cost - offset))
            .sum::<S>()
            / n;
        let scale = if var > S::zero() { var.sqrt() } else { S::one() };
        let inputs = observations.iter().map(|o| vec![o.u / u_max]).collect();
        let targets = observations.iter().map(|o| (o.cost - offset) / scale).collect();
        let data = Dataset::new(inputs, targets)?;
        let init = warm_start
            .cloned()
            .unwrap_or_else(|| KernelParams::isotropic(S::one(), S::lit(0.2), 1, S::lit(1e-4)));
        let gp = fit_hyperparams(&data, &init, MeanMode::Zero, config)?;
        Ok(Surrogate {
            gp,
            u_max,
            offset,
            scale,
        })
    }

    /// Posterior mean and latent variance of the cost at `u`.
    pub fn predict(&self, u: S) -> Result<(S, S)> {
        let (m, v) = self.gp.posterior_predict(&[u / self.u_max])?;
        Ok((self.offset + self.scale * m, self.scale * self.scale * v))
    }

    /// Kernel parameters in standardized units.
    pub fn params(&self) -> &KernelParams<S> {
        self.gp.params()
    }

    pub fn gp(&self) -> &TrainedGp<S> {
        &self.gp
    }
}

/// Expected improvement below `best` for a Gaussian prediction `N(mean, sd²)`.
pub fn expected_improvement_from_moments<S: Scalar>(mean: S, sd: S, best: S) -> S {
    if !(sd > S::zero()) {
        return S::zero();
    }
    let z = ((best - mean) / sd).as_f64();
    sd * S::lit(ei_kernel(z))
}

pub fn expected_improvement<S: Scalar>(surrogate: &Surrogate<S>, u: S, best: S) -> Result<S> {
    let (m, v) = surrogate.predict(u)?;
    Ok(expected_improvement_from_moments(m, v.max(S::zero()).sqrt(), best))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal<S> {
    pub u: S,
    pub grid_index: usize,
    pub ei: S,
}

fn grid_point<S: Scalar>(u_max: S, grid_size: usize, j: usize) -> S {
    if j == grid_size - 1 {
        u_max
    } else {
        u_max * S::lit(j as f64) / S::lit((grid_size - 1) as f64)
    }
}

/// Grid argmax of expected improvement with ties going to the smallest `u`. If the
/// winner is `previous`, the better of its grid neighbours is taken instead.
pub fn propose_next<S: Scalar>(
    surrogate: &Surrogate<S>,
    best: S,
    grid_size: usize,
    previous: Option<usize>,
) -> Result<Proposal<S>> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter {
            name: "grid_size",
            reason: "need at least 2".into(),
        });
    }
    let u_max = surrogate.u_max;
    let ei = (0..grid_size)
        .map(|j| expected_improvement(surrogate, grid_point(u_max, grid_size, j), best))
        .collect::<Result<Vec<S>>>()?;
    let mut idx = 0;
    for j in 1..grid_size {
        if ei[j] > ei[idx] {
            idx = j;
        }
    }
    if previous == Some(idx) {
        idx = match (idx.checked_sub(1), (idx + 1 < grid_size).then_some(idx + 1)) {
            (Some(l), Some(r)) => {
                if ei[r] > ei[l] {
                    r
                } else {
                    l
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => idx,
        };
    }
    Ok(Proposal {
        u: grid_point(u_max, grid_size, idx),
        grid_index: idx,
        ei: ei[idx],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BoOutcome<S: Scalar> {
    pub u_best: S,
    pub best_cost: S,
    pub trace: Vec<Observation<S>>,
    /// Set when a surrogate fit failed and the search stopped early.
    pub surrogate_failed: bool,
}

fn best_of<S: Scalar>(trace: &[Observation<S>]) -> Observation<S> {
    let mut best = trace[0];
    for o in &trace[1..] {
        if o.cost < best.cost {
            best = *o;
        }
    }
    best
}

/// Minimizes `objective` on `[0, u_max]`: the initial design, then `iterations` rounds of
/// surrogate fit, grid proposal and evaluation. Returns the best observed input.
pub fn optimize_bolus<S, F>(mut objective: F, u_max: S, config: &BoConfig) -> Result<BoOutcome<S>>
where
    S: Scalar,
    F: FnMut(S) -> Result<S>,
{
    config.validate()?;
    let mut trace = Vec::with_capacity(config.initial_points + config.iterations);
    for u in init_design(S::zero(), u_max, config.initial_points)? {
        trace.push(Observation {
            iteration: 0,
            u,
            cost: checked(objective(u)?, u)?,
            ei: None,
        });
    }

    let mut warm: Option<KernelParams<S>> = None;
    let mut previous = None;
    let mut surrogate_failed = false;
    for it in 1..=config.iterations {
        let best = best_of(&trace).cost;
        let surrogate = match Surrogate::fit(&trace, u_max, &config.fit, warm.as_ref()) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("surrogate fit failed at iteration {it}: {e}");
                surrogate_failed = true;
                break;
            }
        };
        let p = propose_next(&surrogate, best, config.grid_size, previous)?;
        warm = Some(surrogate.params().clone());
        previous = Some(p.grid_index);
        trace.push(Observation {
            iteration: it,
            u: p.u,
            cost: checked(objective(p.u)?, p.u)?,
            ei: Some(p.ei),
        });
    }

    let best = best_of(&trace);
    Ok(BoOutcome {
        u_best: best.u,
        best_cost: best.cost,
        trace,
        surrogate_failed,
    })
}

fn checked<S: Scalar>(cost: S, u: S) -> Result<S> {
    if cost.is_finite() {
        Ok(cost)
    } else {
        log::error!("objective returned {cost} at u = {u}");
        Err(Error::NonFinite("objective value"))
    }
}

/// Writes `iteration,u,cost,ei` rows; `ei` is empty for the initial design.
pub fn write_trace_csv<S: Scalar, W: Write>(w: W, trace: &[Observation<S>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["iteration", "u", "cost", "ei"])?;
    for o in trace {
        wr.write_record([
            o.iteration.to_string(),
            o.u.to_string(),
            o.cost.to_string(),
            o.ei.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    wr.flush().map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_includes_endpoints() {
        let d = init_design(0.0f64, 15.0, 8).unwrap();
        assert_eq!(d.len(), 8);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[7], 15.0);
        for w in d.windows(2) {
            assert!((w[1] - w[0] - 15.0 / 7.0).abs() < 1e-12);
        }
        assert_eq!(init_design(0.0f64, 1.0, 2).unwrap(), vec![0.0, 1.0]);
        assert!(init_design(0.0f64, 1.0, 1).is_err());
        assert!(init_design(1.0f64, 1.0, 3).is_err());
    }

    #[test]
    fn ei_without_uncertainty_is_zero() {
        assert_eq!(expected_improvement_from_moments(1.0f64, 0.0, 5.0), 0.0);
    }

    #[test]
    fn ei_at_incumbent_is_scaled_density() {
        let e = expected_improvement_from_moments(3.0f64, 1.0, 3.0);
        assert!((e - 0.398_942_280_401_432_7).abs() < 1e-12);
        let e = expected_improvement_from_moments(3.0f64, 2.5, 3.0);
        assert!((e - 2.5 * 0.398_942_280_401_432_7).abs() < 1e-12);
    }

    #[test]
    fn ei_far_below_is_improvement() {
        // mean 10 below the incumbent with tiny spread: EI ≈ best - mean
        let e = expected_improvement_from_moments(0.0f64, 1e-3, 10.0);
        assert!((e - 10.0).abs() < 1e-9);
    }

    fn surrogate_on(points: &[(f64, f64)], u_max: f64) -> Surrogate<f64> {
        let obs: Vec<_> = points
            .iter()
            .map(|&(u, cost)| Observation {
                iteration: 0,
                u,
                cost,
                ei: None,
            })
            .collect();
        Surrogate::fit(&obs, u_max, &BoConfig::default().fit, None).unwrap()
    }

    #[test]
    fn surrogate_interpolates_observations() {
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|i| {
                let u = 15.0 * i as f64 / 7.0;
                (u, (u - 6.0).powi(2))
            })
            .collect();
        let s = surrogate_on(&pts, 15.0);
        for &(u, c) in &pts {
            let (m, v) = s.predict(u).unwrap();
            assert!((m - c).abs() < 1e-2 * (1.0 + c), "u={u} m={m} c={c}");
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn proposal_stays_on_grid_and_in_bounds() {
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|i| {
                let u = 15.0 * i as f64 / 7.0;
                (u, (u - 6.0).powi(2))
            })
            .collect();
        let s = surrogate_on(&pts, 15.0);
        let best = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let p = propose_next(&s, best, 512, None).unwrap();
        assert!((0.0..=15.0).contains(&p.u));
        assert_eq!(p.u, 15.0 * p.grid_index as f64 / 511.0);
        // the incumbent is at 30/7 ≈ 4.29 and the next at 45/7 ≈ 6.43, the EI peak lies between
        assert!(p.u > 4.0 && p.u < 7.0, "{}", p.u);
    }

    #[test]
    fn repeated_argmax_moves_to_neighbour() {
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|i| {
                let u = 15.0 * i as f64 / 7.0;
                (u, (u - 6.0).powi(2))
            })
            .collect();
        let s = surrogate_on(&pts, 15.0);
        let p = propose_next(&s, 3.0, 512, None).unwrap();
        let q = propose_next(&s, 3.0, 512, Some(p.grid_index)).unwrap();
        assert_eq!(q.grid_index.abs_diff(p.grid_index), 1);
    }

    #[test]
    fn quadratic_converges() {
        let out = optimize_bolus(|u: f64| Ok((u - 6.0).powi(2)), 15.0, &BoConfig::default()).unwrap();
        assert_eq!(out.trace.len(), 33);
        assert!(!out.surrogate_failed);
        assert!((out.u_best - 6.0).abs() < 0.1, "{}", out.u_best);
    }

    #[test]
    fn increasing_objective_picks_zero() {
        let out = optimize_bolus(|u: f64| Ok(u + 0.1 * u * u), 15.0, &BoConfig::default()).unwrap();
        assert_eq!(out.u_best, 0.0);
    }

    #[test]
    fn best_cost_is_trace_minimum() {
        let out = optimize_bolus(|u: f64| Ok((u - 2.0).abs().sqrt()), 15.0, &BoConfig::default()).unwrap();
        let min = out.trace.iter().map(|o| o.cost).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_cost, min);
        assert!(out.trace.iter().all(|o| (0.0..=15.0).contains(&o.u)));
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let r = optimize_bolus(|u: f64| Ok(if u > 10.0 { f64::NAN } else { u }), 15.0, &BoConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let out = optimize_bolus(|u: f64| Ok((u - 6.0).powi(2)), 15.0, &BoConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &out.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,u,cost,ei");
        assert_eq!(lines.len(), 34);
        assert!(lines[1].ends_with(','));
    }
}
