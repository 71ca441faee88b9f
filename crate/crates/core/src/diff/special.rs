//! Log-gamma, digamma and trigamma on the positive reals.
//!
//! Each function shifts its argument upward with the functional recurrence
//! until it reaches [`SHIFT_THRESHOLD`] and then sums the first eight terms of
//! the corresponding asymptotic (Stirling) series.

use crate::error::{GpnError, Result};

const SHIFT_THRESHOLD: f64 = 6.0;

/// B_2, B_4, ..., B_16.
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn check_domain(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(GpnError::Domain(format!("{name}({x}) requires a finite x > 0")))
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn lgamma(x: f64) -> Result<f64> {
    check_domain("lgamma", x)?;
    Ok(lgamma_unchecked(x))
}

/// `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check_domain("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// `ψ'(x)` for `x > 0`.
pub fn trigamma(x: f64) -> Result<f64> {
    check_domain("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn lgamma_unchecked(mut x: f64) -> f64 {
    // ln Γ(x) = ln Γ(x + n) - ln(x (x+1) ... (x+n-1))
    let mut shift = 1.0;
    while x < SHIFT_THRESHOLD {
        shift *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv;
    for (k, b) in BERNOULLI.iter().enumerate() {
        let n = 2.0 * (k as f64 + 1.0);
        series += b / (n * (n - 1.0)) * pow;
        pow *= inv2;
    }
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series - shift.ln()
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < SHIFT_THRESHOLD {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    let mut pow = inv2;
    for (k, b) in BERNOULLI.iter().enumerate() {
        let n = 2.0 * (k as f64 + 1.0);
        series += b / n * pow;
        pow *= inv2;
    }
    acc + x.ln() - 0.5 / x - series
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < SHIFT_THRESHOLD {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv2 * inv;
    for b in BERNOULLI.iter() {
        series += b * pow;
        pow *= inv2;
    }
    acc + inv + 0.5 * inv2 + series
}
