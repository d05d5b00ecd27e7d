//! Standard normal density/distribution and the expected-improvement kernel.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::erf::erfc;

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Mills ratio `R(x) = (1 - Φ(x)) / φ(x)` for `x > 0`, by Lentz's continued fraction
/// `R(x) = 1/(x + 1/(x + 2/(x + 3/(x + …))))`.
fn mills_ratio(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// `h(z) = z Φ(z) + φ(z)`, the expected improvement of a unit-variance Gaussian with
/// standardized improvement `z`. Evaluated via the Mills ratio in the lower tail, where
/// the direct form cancels catastrophically.
pub fn ei_kernel(z: f64) -> f64 {
    if z >= -6.0 {
        (z * normal_cdf(z) + normal_pdf(z)).max(0.0)
    } else {
        let x = -z;
        // Φ(z) = φ(x) R(x), so h = φ(x) (1 - x R(x))
        let r = mills_ratio(x);
        (normal_pdf(x) * (1.0 - x * r)).max(0.0)
    }
}
