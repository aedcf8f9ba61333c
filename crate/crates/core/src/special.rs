//! Scalar special functions and windowed probability mass vectors.
//!
//! The pmf builders return contiguous windows `[lo, hi]` outside of which
//! the neglected mass is far below 1e-13. Values inside the window are
//! generated by the ratio recurrence started at the mode, which keeps the
//! cost at one multiply per cell.

use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::{gamma_lr, gamma_ur};

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`normal_cdf`], accurate in both tails.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < 0.5 {
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
    } else {
        std::f64::consts::SQRT_2 * erfc_inv(2.0 * (1.0 - p))
    }
}

/// Regularized lower incomplete gamma P(a, x), with P(a, 0) = 0.
pub fn reg_gamma_lower(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x), with Q(a, 0) = 1.
pub fn reg_gamma_upper(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x <= a {
        1.0 - gamma_lr(a, x)
    } else {
        gamma_ur(a, x)
    }
}

/// P(X > c) for X ~ Poisson(mean).
pub fn poisson_upper_tail(c: u64, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    reg_gamma_lower(c as f64 + 1.0, mean)
}

pub fn poisson_pmf(k: u64, mean: f64) -> f64 {
    if mean <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * mean.ln() - mean - ln_factorial(k)).exp()
}

pub fn binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let ln_choose = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
    (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()).exp()
}

fn window_around(mean: f64, sd: f64, upper_limit: Option<u64>) -> (u64, u64) {
    let span = 10.0 * sd + 10.0;
    let lo = (mean - span).floor().max(0.0) as u64;
    let mut hi = (mean + span).ceil().max(0.0) as u64;
    if let Some(limit) = upper_limit {
        hi = hi.min(limit);
    }
    (lo, hi)
}

/// Index window carrying all but a negligible part of a Poisson law.
pub fn poisson_window(mean: f64) -> (u64, u64) {
    if mean <= 0.0 {
        return (0, 0);
    }
    window_around(mean, mean.sqrt(), None)
}

/// Index window carrying all but a negligible part of a binomial law.
pub fn binomial_window(n: u64, p: f64) -> (u64, u64) {
    if p <= 0.0 {
        return (0, 0);
    }
    if p >= 1.0 {
        return (n, n);
    }
    let mean = n as f64 * p;
    window_around(mean, (mean * (1.0 - p)).sqrt(), Some(n))
}

/// Fill `out[k - lo]` for k in `lo..=hi` from a mode value and the forward
/// ratio `ratio(k) = pmf(k + 1) / pmf(k)`.
fn fill_from_mode(
    lo: u64,
    hi: u64,
    mode: u64,
    mode_value: f64,
    ratio: impl Fn(u64) -> f64,
) -> Vec<f64> {
    let len = (hi - lo + 1) as usize;
    let mut out = vec![0.0; len];
    let mode = mode.clamp(lo, hi);
    out[(mode - lo) as usize] = mode_value;
    let mut v = mode_value;
    for k in mode..hi {
        v *= ratio(k);
        out[(k + 1 - lo) as usize] = v;
    }
    v = mode_value;
    for k in (lo..mode).rev() {
        let r = ratio(k);
        v = if r > 0.0 { v / r } else { 0.0 };
        out[(k - lo) as usize] = v;
    }
    out
}

// The mode value carries the rounding of ln_factorial, which grows with k;
// the window holds all but ~1e-20 of the mass, so rescaling to unit sum is
// the more accurate normalization.
fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Poisson pmf over its window; returns `(lo, values)`.
pub fn poisson_pmf_window(mean: f64) -> (u64, Vec<f64>) {
    if mean <= 0.0 {
        return (0, vec![1.0]);
    }
    let (lo, hi) = poisson_window(mean);
    let mode = (mean.floor() as u64).clamp(lo, hi);
    let values = fill_from_mode(lo, hi, mode, poisson_pmf(mode, mean), |k| {
        mean / (k as f64 + 1.0)
    });
    (lo, normalized(values))
}

/// Binomial pmf over its window; returns `(lo, values)`.
pub fn binomial_pmf_window(n: u64, p: f64) -> (u64, Vec<f64>) {
    if p <= 0.0 {
        return (0, vec![1.0]);
    }
    if p >= 1.0 {
        return (n, vec![1.0]);
    }
    let (lo, hi) = binomial_window(n, p);
    let mode = (((n + 1) as f64 * p).floor() as u64).clamp(lo, hi);
    let odds = p / (1.0 - p);
    let values = fill_from_mode(lo, hi, mode, binomial_pmf(mode, n, p), |k| {
        (n - k) as f64 / (k as f64 + 1.0) * odds
    });
    (lo, normalized(values))
}

/// Discrete convolution of two offset vectors.
pub fn convolve(a_lo: u64, a: &[f64], b_lo: u64, b: &[f64]) -> (u64, Vec<f64>) {
    if a.is_empty() || b.is_empty() {
        return (a_lo + b_lo, Vec::new());
    }
    if b.len() == 1 {
        return (a_lo + b_lo, a.iter().map(|x| x * b[0]).collect());
    }
    if a.len() == 1 {
        return (a_lo + b_lo, b.iter().map(|x| x * a[0]).collect());
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    (a_lo + b_lo, out)
}
