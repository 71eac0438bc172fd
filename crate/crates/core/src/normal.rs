//! Standard normal distribution helpers and truncated-normal sampling.

use rand::Rng;
use statrs::function::erf::{erfc, erfc_inv};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Beyond this many standard deviations the CDF difference loses relative
/// precision and the sampler switches to rejection schemes.
const TAIL_SWITCH: f64 = 6.0;

pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail probability `1 - cdf(x)`, accurate for large `x`.
pub fn sf(x: f64) -> f64 {
    cdf(-x)
}

/// Inverse of [`cdf`], refined with one Newton step.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    let d = pdf(x);
    if d > 0.0 && x.is_finite() {
        // solve in the smaller tail to keep relative accuracy
        if p < 0.5 {
            x - (cdf(x) - p) / d
        } else {
            x + (sf(x) - (1.0 - p)) / d
        }
    } else {
        x
    }
}

/// Mean of the standard normal truncated to `[lo, hi]`.
pub fn truncated_mean(lo: f64, hi: f64) -> f64 {
    let mass = cdf(hi) - cdf(lo);
    (pdf(lo) - pdf(hi)) / mass
}

/// Draw from N(0,1) truncated to `[lo, hi)`.
///
/// Inverse-CDF on the truncated mass while the bounds stay within
/// `TAIL_SWITCH` deviations, rejection sampling in the far tails. The result
/// always satisfies `lo <= x < hi` (for `lo < hi`).
pub fn sample_truncated<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    debug_assert!(!lo.is_nan() && !hi.is_nan());
    if lo >= hi {
        return lo;
    }
    let x = if lo >= 0.0 {
        sample_upper(rng, lo, hi)
    } else if hi <= 0.0 {
        -sample_upper(rng, -hi, -lo)
    } else {
        let a = cdf(lo);
        let b = cdf(hi);
        let u: f64 = rng.random();
        quantile(a + u * (b - a))
    };
    clamp_half_open(x, lo, hi)
}

pub(crate) fn clamp_half_open(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x >= hi {
        if hi.is_finite() {
            hi.next_down().max(lo)
        } else {
            f64::MAX
        }
    } else {
        x
    }
}

/// `0 <= a < b`, upper tail.
fn sample_upper<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    if a <= TAIL_SWITCH {
        let qa = sf(a);
        let qb = sf(b);
        let u: f64 = rng.random();
        let q = qb + u * (qa - qb);
        return -quantile(q);
    }
    if b - a < 1.0 / a {
        // narrow far-tail window: uniform proposal
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            let u: f64 = rng.random();
            if u.ln() <= 0.5 * (a * a - z * z) {
                return z;
            }
        }
    }
    // translated exponential proposal
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = -(1.0 - rng.random::<f64>()).ln();
        let z = a + e / lambda;
        if z >= b {
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (z - lambda) * (z - lambda) {
            return z;
        }
    }
}
