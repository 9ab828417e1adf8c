//! Closed-form weighted DKW inequalities.
//!
//! Each evaluator returns a deviation level paired with the probability
//! that the weighted empirical CDF exceeds it in sup norm. `c` is the
//! unspecified universal constant of the bracketing-entropy step; callers
//! pick it explicitly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DkwBoundResult {
    pub deviation_threshold: f64,
    pub failure_probability: f64,
}

impl DkwBoundResult {
    fn new(deviation_threshold: f64, failure_probability: f64) -> Self {
        Self {
            deviation_threshold,
            failure_probability: failure_probability.clamp(0.0, 1.0),
        }
    }
}

fn check_n(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    Ok(n as f64)
}

/// Bounded ratio `dQ/dP ≤ B`: threshold `√(2B² ln(4/δ)/n) + 3C√(B/n)` holds
/// except with probability `δ`.
pub fn dkw_bounded_ratio(n: usize, b: f64, delta_prob: f64, c: f64) -> Result<DkwBoundResult> {
    let nf = check_n(n)?;
    if !(b >= 1.0) || !b.is_finite() {
        return Err(invalid(format!("ratio bound B must be >= 1, got {b}")));
    }
    if !(delta_prob > 0.0 && delta_prob < 1.0) {
        return Err(invalid(format!(
            "failure probability must be in (0, 1), got {delta_prob}"
        )));
    }
    if !(c >= 0.0) {
        return Err(invalid("constant C must be nonnegative"));
    }
    let concentration = (2.0 * b * b * (4.0 / delta_prob).ln() / nf).sqrt();
    let expectation = 3.0 * c * (b / nf).sqrt();
    Ok(DkwBoundResult::new(concentration + expectation, delta_prob))
}

/// Second-moment ratio `‖dQ/dP‖_{P,2} ≤ K`:
/// `P(sup > t) ≤ 6CK/(t√n) + 4(K² − 1)/(n t²)`.
pub fn dkw_second_moment(n: usize, k: f64, deviation: f64, c: f64) -> Result<DkwBoundResult> {
    let nf = check_n(n)?;
    if !(k >= 1.0) || !k.is_finite() {
        return Err(invalid(format!("second-moment bound K must be >= 1, got {k}")));
    }
    if !(deviation > 0.0) {
        return Err(invalid("deviation must be positive"));
    }
    let p = 6.0 * c * k / (deviation * nf.sqrt()) + 4.0 * (k * k - 1.0) / (nf * deviation * deviation);
    Ok(DkwBoundResult::new(deviation, p))
}

/// Deviation at which [`dkw_second_moment`] reaches `delta_prob`: the
/// positive root of `δ t² − (6CK/√n) t − 4(K² − 1)/n = 0`.
pub fn dkw_second_moment_threshold(n: usize, k: f64, delta_prob: f64, c: f64) -> Result<DkwBoundResult> {
    let nf = check_n(n)?;
    if !(k >= 1.0) {
        return Err(invalid(format!("second-moment bound K must be >= 1, got {k}")));
    }
    if !(delta_prob > 0.0 && delta_prob <= 1.0) {
        return Err(invalid("failure probability must be in (0, 1]"));
    }
    let lin = 6.0 * c * k / nf.sqrt();
    let cst = 4.0 * (k * k - 1.0) / nf;
    let t = (lin + (lin * lin + 4.0 * delta_prob * cst).sqrt()) / (2.0 * delta_prob);
    Ok(DkwBoundResult::new(t, delta_prob))
}

/// Constant-free version for `dQ/dP ≤ B`:
/// `P(sup > t) ≤ (72/t) e^{−n t²/(4B)} + 2 e^{−n t²/(2B²)}`.
pub fn dkw_alternative(n: usize, b: f64, deviation: f64) -> Result<DkwBoundResult> {
    let nf = check_n(n)?;
    if !(b >= 1.0) || !b.is_finite() {
        return Err(invalid(format!("ratio bound B must be >= 1, got {b}")));
    }
    if !(deviation >= 0.0) {
        return Err(invalid("deviation must be nonnegative"));
    }
    if deviation == 0.0 {
        return Ok(DkwBoundResult::new(0.0, 1.0));
    }
    let t2 = deviation * deviation;
    let p = (72.0 / deviation) * (-nf * t2 / (4.0 * b)).exp() + 2.0 * (-nf * t2 / (2.0 * b * b)).exp();
    Ok(DkwBoundResult::new(deviation, p))
}

/// Smallest deviation at which [`dkw_alternative`] is at most `delta_prob`
/// (bisection; the bound is strictly decreasing in the deviation).
pub fn dkw_alternative_threshold(n: usize, b: f64, delta_prob: f64) -> Result<DkwBoundResult> {
    if !(delta_prob > 0.0 && delta_prob < 1.0) {
        return Err(invalid("failure probability must be in (0, 1)"));
    }
    let mut lo = 1e-12;
    let mut hi = 1.0;
    while dkw_alternative(n, b, hi)?.failure_probability > delta_prob {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dkw_alternative(n, b, mid)?.failure_probability > delta_prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(DkwBoundResult::new(hi, delta_prob))
}

/// Unweighted two-sided DKW (Massart constant): `√(ln(2/δ)/(2n))`.
pub fn classical_dkw_threshold(n: usize, delta_prob: f64) -> Result<DkwBoundResult> {
    let nf = check_n(n)?;
    if !(delta_prob > 0.0 && delta_prob < 1.0) {
        return Err(invalid("failure probability must be in (0, 1)"));
    }
    Ok(DkwBoundResult::new(
        ((2.0 / delta_prob).ln() / (2.0 * nf)).sqrt(),
        delta_prob,
    ))
}
