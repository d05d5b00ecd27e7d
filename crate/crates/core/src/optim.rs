//! Derivative-free simplex descent (Nelder–Mead with dimension-adaptive coefficients).

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this (absolute).
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            max_evals: 2000,
            f_tol: 1e-9,
            x_tol: 1e-7,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult<S> {
    pub x: Vec<S>,
    pub value: S,
    pub evals: usize,
    /// Best value after each iteration; nonincreasing.
    pub best_history: Vec<S>,
}

/// Minimizes `f` from `x0`. Non-finite objective values are treated as `+inf`, which lets
/// callers encode box constraints by returning `inf` outside the feasible region.
pub fn nelder_mead<S, F>(mut f: F, x0: &[S], cfg: &NelderMeadConfig) -> NelderMeadResult<S>
where
    S: Scalar,
    F: FnMut(&[S]) -> S,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[S], evals: &mut usize| -> S {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            S::infinity()
        }
    };

    if n == 0 {
        let v = eval(x0, &mut evals);
        return NelderMeadResult {
            x: Vec::new(),
            value: v,
            evals,
            best_history: vec![v],
        };
    }

    let nf = n as f64;
    let alpha = S::one();
    let gamma = S::lit(1.0 + 2.0 / nf);
    let rho = S::lit(0.75 - 0.5 / nf);
    let sigma = S::lit(1.0 - 1.0 / nf);
    let step = S::lit(cfg.initial_step);

    let mut simplex: Vec<Vec<S>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] = p[i] + step;
        simplex.push(p);
    }
    let mut values: Vec<S> = simplex.iter().map(|p| eval(p, &mut evals)).collect();
    let mut best_history = Vec::new();

    let centroid = |simplex: &[Vec<S>], exclude: usize| -> Vec<S> {
        let mut c = vec![S::zero(); n];
        for (k, p) in simplex.iter().enumerate() {
            if k == exclude {
                continue;
            }
            for i in 0..n {
                c[i] = c[i] + p[i];
            }
        }
        let denom = S::lit(nf);
        c.iter_mut().for_each(|v| *v = *v / denom);
        c
    };
    let along = |c: &[S], p: &[S], t: S| -> Vec<S> {
        c.iter().zip(p).map(|(&ci, &pi)| ci + t * (pi - ci)).collect()
    };

    loop {
        // order: best first, stable on ties so runs are reproducible
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        best_history.push(values[0]);

        if evals >= cfg.max_evals {
            break;
        }
        let spread = (values[n] - values[0]).abs();
        let diameter = simplex[1..]
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&simplex[0])
                    .map(|(&a, &b)| (a - b).abs())
                    .fold(S::zero(), S::max)
            })
            .fold(S::zero(), S::max);
        if values[0].is_finite()
            && spread.as_f64() <= cfg.f_tol
            && diameter.as_f64() <= cfg.x_tol.max(cfg.f_tol)
        {
            break;
        }
        if diameter.as_f64() <= cfg.x_tol * 1e-3 {
            break;
        }

        let c = centroid(&simplex, n);
        let xr = along(&c, &simplex[n], -alpha);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(&c, &simplex[n], -gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        // contraction
        let (xc, fc) = if fr < values[n] {
            let xc = along(&c, &xr, rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(&c, &simplex[n], rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for k in 1..=n {
            simplex[k] = along(&best, &simplex[k], sigma);
            values[k] = eval(&simplex[k], &mut evals);
        }
    }

    NelderMeadResult {
        x: simplex[0].clone(),
        value: values[0],
        evals,
        best_history,
    }
}
