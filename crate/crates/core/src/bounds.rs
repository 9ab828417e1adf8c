//! Closed-form training-conditional coverage bounds.
//!
//! Every bound is reported as `alpha` (or `2·alpha`) plus named slack terms,
//! with the probability that the bound fails. Nothing is clipped: a
//! threshold at or above one is returned as is and flagged vacuous.

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{invalid, Result};
use crate::ridge::StabilityProfile;

/// `n ↦ c_n`, the uniform-stability constant at training size `n`.
#[derive(Clone)]
pub enum StabilityCurve {
    /// `c_n = scale / n`, the ridge shape.
    InverseN {
        scale: f64,
    },
    Custom(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl StabilityCurve {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(usize) -> f64 + Send + Sync + 'static,
    {
        StabilityCurve::Custom(Arc::new(f))
    }

    pub fn at(&self, n: usize) -> f64 {
        match self {
            StabilityCurve::InverseN { scale } => {
                if *scale == 0.0 {
                    0.0
                } else {
                    scale / n as f64
                }
            }
            StabilityCurve::Custom(f) => f(n),
        }
    }
}

impl fmt::Debug for StabilityCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StabilityCurve::InverseN { scale } => write!(f, "InverseN({scale})"),
            StabilityCurve::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Serialize for StabilityCurve {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StabilityCurve::InverseN { scale } => {
                let mut m = IndexMap::new();
                m.insert("c_n_scale", *scale);
                m.serialize(s)
            }
            StabilityCurve::Custom(_) => s.serialize_str("custom"),
        }
    }
}

/// Inputs shared by all bound calculators; each calculator reads the
/// fields it needs.
#[derive(Debug, Clone, Serialize)]
pub struct BoundInputs {
    pub alpha: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// Sup bound on the likelihood ratio.
    pub b_ratio: f64,
    /// Second-moment bound on the likelihood ratio.
    pub k2: f64,
    /// Universal constant of the weighted DKW inequality.
    pub c: f64,
    pub stability: StabilityCurve,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Density bound of the held-out score distribution under P.
    pub l: f64,
    /// Same under Q.
    pub l_q: f64,
    pub gamma: f64,
    pub psi_constant: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            delta: 0.05,
            epsilon: 0.05,
            n: 1000,
            m: 1000,
            p: 1,
            b_ratio: 1.0,
            k2: 1.0,
            c: 1.0,
            stability: StabilityCurve::InverseN { scale: 0.0 },
            kappa1: 1.0,
            kappa2: 1.0,
            l: 1.0,
            l_q: 1.0,
            gamma: 1.0,
            psi_constant: 0.5,
        }
    }
}

impl BoundInputs {
    /// Takes `c_n`, `κ₁`, `κ₂` from a ridge stability profile.
    pub fn with_ridge_profile(mut self, profile: &StabilityProfile) -> Self {
        self.stability = StabilityCurve::InverseN { scale: profile.c_scale };
        self.kappa1 = profile.kappa1;
        self.kappa2 = profile.kappa2;
        self
    }

    /// Splits a total failure budget evenly: `ε = δ = budget / 2`.
    pub fn with_failure_budget(mut self, budget: f64) -> Self {
        self.epsilon = budget / 2.0;
        self.delta = budget / 2.0;
        self
    }

    pub fn c_n(&self, n: usize) -> f64 {
        self.stability.at(n)
    }

    pub fn validate(&self) -> Result<()> {
        let in_open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_open_unit(self.alpha) {
            return Err(invalid(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(invalid(format!("delta must be in (0, 1], got {}", self.delta)));
        }
        if !in_open_unit(self.epsilon) {
            return Err(invalid(format!("epsilon must be in (0, 1), got {}", self.epsilon)));
        }
        if self.n == 0 || self.m == 0 || self.p == 0 {
            return Err(invalid("n, m and p must be positive"));
        }
        if !(self.b_ratio >= 1.0 && self.b_ratio.is_finite()) {
            return Err(invalid(format!(
                "ratio bound B must be finite and >= 1, got {}",
                self.b_ratio
            )));
        }
        if !(self.k2 >= 1.0 && self.k2.is_finite()) {
            return Err(invalid(format!(
                "second-moment bound must be finite and >= 1, got {}",
                self.k2
            )));
        }
        for (name, v) in [("C", self.c), ("L", self.l), ("L_Q", self.l_q)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        for (name, v) in [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("gamma", self.gamma),
            ("psi constant", self.psi_constant),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }

    fn stability_at(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(invalid("stability constant needs a positive training size"));
        }
        let c = self.c_n(n);
        if !(c >= 0.0 && c.is_finite()) {
            return Err(invalid(format!(
                "stability constant c_{n} = {c} is not finite and nonnegative"
            )));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub name: String,
    pub alpha: f64,
    pub miscoverage_threshold: f64,
    pub failure_probability: f64,
    pub vacuous: bool,
    pub terms: IndexMap<String, f64>,
    /// Input values the bound was evaluated at.
    pub parameters: IndexMap<String, f64>,
}

impl BoundResult {
    fn assemble(name: &str, base: f64, alpha: f64, terms: Vec<(&str, f64)>, failure: f64) -> Self {
        let threshold = base + terms.iter().map(|t| t.1).sum::<f64>();
        Self {
            name: name.to_string(),
            alpha,
            miscoverage_threshold: threshold,
            failure_probability: failure.clamp(0.0, 1.0),
            vacuous: threshold >= 1.0 || failure >= 1.0,
            terms: terms.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            parameters: IndexMap::new(),
        }
    }

    fn with_params(mut self, params: &[(&str, f64)]) -> Self {
        self.parameters = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        self
    }

    /// Sum of the slack terms.
    pub fn slack(&self) -> f64 {
        self.terms.values().sum()
    }
}

/// `2κ₂ c_{n−1} (1/κ₁ + √(n/(2κ₁²)·ln(2p/ε)))`.
pub fn shorthand_a(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    if inputs.n < 2 {
        return Err(invalid("the jackknife stability shorthand needs n >= 2"));
    }
    let c = inputs.stability_at(inputs.n - 1)?;
    Ok(stability_factor(inputs, c, 2.0))
}

/// `scale·κ₂·c·(1/κ₁ + √(n/(2κ₁²)·ln(2p/ε)))`.
fn stability_factor(inputs: &BoundInputs, c: f64, scale: f64) -> f64 {
    let k1 = inputs.kappa1;
    let n = inputs.n as f64;
    let log_term = (2.0 * inputs.p as f64 / inputs.epsilon).ln();
    scale * inputs.kappa2 * c * (1.0 / k1 + (n / (2.0 * k1 * k1) * log_term).sqrt())
}

/// `c_{n+1} + √(2n·ln(2p/ε))·κ₂c_n/κ₁`.
pub fn shorthand_e(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let c_n = inputs.stability_at(inputs.n)?;
    let c_n1 = inputs.stability_at(inputs.n + 1)?;
    let n = inputs.n as f64;
    let log_term = (2.0 * inputs.p as f64 / inputs.epsilon).ln();
    Ok(c_n1 + (2.0 * n * log_term).sqrt() * inputs.kappa2 * c_n / inputs.kappa1)
}

/// Weighted DKW slack `(√(2B·ln(4/δ)) + 3C)·√(B/size)`.
fn weighted_dkw_slack(inputs: &BoundInputs, size: usize) -> f64 {
    let b = inputs.b_ratio;
    ((2.0 * b * (4.0 / inputs.delta).ln()).sqrt() + 3.0 * inputs.c) * (b / size as f64).sqrt()
}

/// Classical DKW slack `√(ln(2/δ)/(2n))`.
fn dkw_slack(delta: f64, n: usize) -> f64 {
    ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Weighted split conformal with a bounded ratio; the calibration size is `m`.
pub fn split_bound(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    let slack = weighted_dkw_slack(inputs, inputs.m);
    Ok(BoundResult::assemble(
        "split",
        inputs.alpha,
        inputs.alpha,
        vec![("weighted_dkw", slack)],
        inputs.delta,
    )
    .with_params(&[
        ("m", inputs.m as f64),
        ("B", inputs.b_ratio),
        ("C", inputs.c),
        ("delta", inputs.delta),
    ]))
}

/// Weighted split conformal under a second-moment condition `E_P[r²] ≤ K²`:
/// slack `2K²(3C+1)/(δ√m)`.
pub fn split_bound_second_moment(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    let slack = 2.0 * inputs.k2 * (3.0 * inputs.c + 1.0) / (inputs.delta * (inputs.m as f64).sqrt());
    Ok(BoundResult::assemble(
        "split_second_moment",
        inputs.alpha,
        inputs.alpha,
        vec![("second_moment_dkw", slack)],
        inputs.delta,
    )
    .with_params(&[
        ("m", inputs.m as f64),
        ("K2", inputs.k2),
        ("C", inputs.c),
        ("delta", inputs.delta),
    ]))
}

fn stability_params(inputs: &BoundInputs, index: usize, l: f64) -> Result<Vec<(&'static str, f64)>> {
    Ok(vec![
        ("n", inputs.n as f64),
        ("p", inputs.p as f64),
        ("delta", inputs.delta),
        ("epsilon", inputs.epsilon),
        ("c_n", inputs.stability_at(index)?),
        ("kappa1", inputs.kappa1),
        ("kappa2", inputs.kappa2),
        ("L", l),
    ])
}

/// Jackknife+ with exchangeable data.
pub fn jackknife_bound_exch(inputs: &BoundInputs) -> Result<BoundResult> {
    let a = shorthand_a(inputs)?;
    let params = stability_params(inputs, inputs.n - 1, inputs.l)?;
    Ok(BoundResult::assemble(
        "jackknife_plus_exchangeable",
        inputs.alpha,
        inputs.alpha,
        vec![("dkw", dkw_slack(inputs.delta, inputs.n)), ("stability", inputs.l * a)],
        inputs.epsilon + inputs.delta,
    )
    .with_params(&params))
}

/// JAW (weighted jackknife+) under covariate shift with a bounded ratio.
pub fn jackknife_bound_shift(inputs: &BoundInputs) -> Result<BoundResult> {
    let a = shorthand_a(inputs)?;
    let mut params = stability_params(inputs, inputs.n - 1, inputs.l_q)?;
    params.extend([("B", inputs.b_ratio), ("C", inputs.c)]);
    Ok(BoundResult::assemble(
        "jackknife_plus_shift",
        inputs.alpha,
        inputs.alpha,
        vec![
            ("weighted_dkw", weighted_dkw_slack(inputs, inputs.n)),
            ("stability", inputs.l_q * a),
        ],
        inputs.epsilon + inputs.delta,
    )
    .with_params(&params))
}

/// CV+ with `m` samples per fold; `L` is read as `L_{n−m}`.
pub fn cv_plus_bound(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    if inputs.m >= inputs.n {
        return Err(invalid("fold size m must be smaller than n"));
    }
    let c = inputs.stability_at(inputs.n - inputs.m)?;
    let stability = inputs.l * stability_factor(inputs, c, 2.0 * inputs.m as f64);
    let mut params = stability_params(inputs, inputs.n - inputs.m, inputs.l)?;
    params.push(("m", inputs.m as f64));
    Ok(BoundResult::assemble(
        "cv_plus",
        inputs.alpha,
        inputs.alpha,
        vec![("dkw", dkw_slack(inputs.delta, inputs.n)), ("stability", stability)],
        inputs.epsilon + inputs.delta,
    )
    .with_params(&params))
}

/// Full conformal with exchangeable data.
pub fn full_bound_exch(inputs: &BoundInputs) -> Result<BoundResult> {
    let e = shorthand_e(inputs)?;
    let params = stability_params(inputs, inputs.n, inputs.l)?;
    Ok(BoundResult::assemble(
        "full_exchangeable",
        inputs.alpha,
        inputs.alpha,
        vec![("dkw", dkw_slack(inputs.delta, inputs.n)), ("stability", inputs.l * e)],
        inputs.epsilon + inputs.delta,
    )
    .with_params(&params))
}

/// Weighted full conformal under covariate shift with a bounded ratio.
pub fn full_bound_shift(inputs: &BoundInputs) -> Result<BoundResult> {
    let e = shorthand_e(inputs)?;
    let mut params = stability_params(inputs, inputs.n, inputs.l_q)?;
    params.extend([("B", inputs.b_ratio), ("C", inputs.c)]);
    Ok(BoundResult::assemble(
        "full_shift",
        inputs.alpha,
        inputs.alpha,
        vec![
            ("weighted_dkw", weighted_dkw_slack(inputs, inputs.n)),
            ("stability", inputs.l_q * e),
        ],
        inputs.epsilon + inputs.delta,
    )
    .with_params(&params))
}

/// Unweighted split conformal with exchangeable data, via the classical
/// DKW inequality: slack `√(ln(2/δ)/(2m))`.
pub fn classical_split_bound(alpha: f64, delta: f64, m: usize) -> Result<BoundResult> {
    let inputs = BoundInputs {
        alpha,
        delta,
        m,
        ..BoundInputs::default()
    };
    inputs.validate()?;
    Ok(BoundResult::assemble(
        "split_classical_dkw",
        alpha,
        alpha,
        vec![("dkw", dkw_slack(delta, m))],
        delta,
    )
    .with_params(&[("m", m as f64), ("delta", delta)]))
}

/// Stability-free K-fold CV+ bound `2α + √(2·ln(K/δ)/m)`.
pub fn bian_cv_bound(alpha: f64, delta: f64, folds: usize, m: usize) -> Result<BoundResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must be in (0, 1), got {delta}")));
    }
    if folds == 0 || m == 0 {
        return Err(invalid("folds and fold size must be positive"));
    }
    let slack = (2.0 * (folds as f64 / delta).ln() / m as f64).sqrt();
    Ok(BoundResult::assemble(
        "cv_plus_fold_concentration",
        2.0 * alpha,
        alpha,
        vec![("concentration", slack)],
        delta,
    )
    .with_params(&[("K", folds as f64), ("m", m as f64), ("delta", delta)]))
}

/// Comparison bound for the γ-inflated jackknife+ with `m` held-out points:
/// `α + 3√(ln(1/δ)/min(m,n)) + 2(ψ/γ)^{1/3}`, `ψ = psi_constant·m·c_{n−1}`.
pub fn liang_comparison_bound(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    if inputs.n < 2 {
        return Err(invalid("the comparison bound needs n >= 2"));
    }
    if inputs.delta >= 1.0 {
        return Err(invalid("delta must be below 1 for the comparison bound"));
    }
    let psi = inputs.psi_constant * inputs.m as f64 * inputs.stability_at(inputs.n - 1)?;
    let cube = (psi / inputs.gamma).cbrt();
    let size = inputs.m.min(inputs.n) as f64;
    let concentration = 3.0 * ((1.0 / inputs.delta).ln() / size).sqrt();
    Ok(BoundResult::assemble(
        "inflated_jackknife_comparison",
        inputs.alpha,
        inputs.alpha,
        vec![("concentration", concentration), ("stability", 2.0 * cube)],
        3.0 * inputs.delta + cube,
    )
    .with_params(&[
        ("n", inputs.n as f64),
        ("m", inputs.m as f64),
        ("gamma", inputs.gamma),
        ("psi", psi),
        ("psi_constant", inputs.psi_constant),
        ("delta", inputs.delta),
    ]))
}

/// Held-out size balancing the two comparison-bound terms for `c_n ∝ 1/n`:
/// `m = n^{2/5}`, rounded, at least 1.
pub fn balanced_comparison_m(n: usize) -> usize {
    ((n as f64).powf(0.4).round() as usize).max(1)
}

/// [`liang_comparison_bound`] at the balanced held-out size.
pub fn liang_balanced_bound(inputs: &BoundInputs) -> Result<BoundResult> {
    let mut balanced = inputs.clone();
    balanced.m = balanced_comparison_m(inputs.n);
    let mut r = liang_comparison_bound(&balanced)?;
    r.name = "inflated_jackknife_comparison_balanced".to_string();
    Ok(r)
}

/// Every bound that applies to `inputs`, keyed by name. Bounds whose
/// preconditions fail (e.g. `m ≥ n` for CV+) are skipped.
pub fn all_bounds(inputs: &BoundInputs, folds: usize) -> Result<IndexMap<String, BoundResult>> {
    inputs.validate()?;
    let mut out = IndexMap::new();
    let mut push = |r: Result<BoundResult>| {
        if let Ok(r) = r {
            out.insert(r.name.clone(), r);
        }
    };
    push(split_bound(inputs));
    push(split_bound_second_moment(inputs));
    push(jackknife_bound_exch(inputs));
    push(jackknife_bound_shift(inputs));
    push(cv_plus_bound(inputs));
    push(full_bound_exch(inputs));
    push(full_bound_shift(inputs));
    push(bian_cv_bound(inputs.alpha, inputs.delta, folds, inputs.m));
    push(liang_comparison_bound(inputs));
    push(liang_balanced_bound(inputs));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// c_99 = 0.01, c_100 = 0.01, c_101 = 0.0099, as in the hand examples.
    fn hand_inputs() -> BoundInputs {
        BoundInputs {
            n: 100,
            p: 2,
            epsilon: 0.1,
            delta: 0.1,
            kappa1: 1.0,
            kappa2: 2.0,
            stability: StabilityCurve::custom(|n| match n {
                101 => 0.0099,
                _ => 0.01,
            }),
            ..BoundInputs::default()
        }
    }

    fn ridge_inputs(n: usize) -> BoundInputs {
        BoundInputs {
            n,
            m: n,
            p: 2,
            stability: StabilityCurve::InverseN { scale: 16.0 },
            kappa1: 1.0,
            kappa2: 2f64.sqrt(),
            ..BoundInputs::default()
        }
    }

    fn assert_bookkeeping(r: &BoundResult, base: f64) {
        assert!(close(r.miscoverage_threshold, base + r.slack(), 1e-12));
    }

    #[test]
    fn shorthand_a_examples() {
        assert!(close(shorthand_a(&hand_inputs()).unwrap(), 0.583_240_606_3, 1e-9));
        let zero = BoundInputs {
            stability: StabilityCurve::InverseN { scale: 0.0 },
            ..hand_inputs()
        };
        assert_eq!(shorthand_a(&zero).unwrap(), 0.0);
        let doubled = BoundInputs {
            stability: StabilityCurve::custom(|_| 0.02),
            ..hand_inputs()
        };
        assert!(close(
            shorthand_a(&doubled).unwrap(),
            2.0 * shorthand_a(&hand_inputs()).unwrap(),
            1e-12
        ));
    }

    #[test]
    fn shorthand_e_examples() {
        assert!(close(shorthand_e(&hand_inputs()).unwrap(), 0.553_140_606_3, 1e-9));
        let zero = BoundInputs {
            stability: StabilityCurve::InverseN { scale: 0.0 },
            ..hand_inputs()
        };
        assert_eq!(shorthand_e(&zero).unwrap(), 0.0);
        let tighter = BoundInputs {
            epsilon: 0.01,
            ..hand_inputs()
        };
        assert!(shorthand_e(&tighter).unwrap() > shorthand_e(&hand_inputs()).unwrap());
    }

    #[test]
    fn split_bound_examples() {
        let inputs = BoundInputs {
            alpha: 0.1,
            delta: 0.1,
            m: 10_000,
            b_ratio: 1.2,
            c: 1.0,
            ..BoundInputs::default()
        };
        let r = split_bound(&inputs).unwrap();
        assert!(close(r.miscoverage_threshold, 0.165_457_79, 1e-7));
        assert_eq!(r.failure_probability, 0.1);
        assert!(!r.vacuous);
        assert_bookkeeping(&r, 0.1);

        let m = 400;
        let plain = BoundInputs {
            m,
            b_ratio: 1.0,
            c: 0.0,
            delta: 4.0 * (-2f64).exp(),
            ..BoundInputs::default()
        };
        assert!(close(
            split_bound(&plain).unwrap().slack(),
            2.0 / (m as f64).sqrt(),
            1e-12
        ));

        let huge = BoundInputs {
            m: usize::MAX / 2,
            ..inputs
        };
        assert!(split_bound(&huge).unwrap().slack() < 1e-8);
    }

    #[test]
    fn classical_split_matches_dkw() {
        let r = classical_split_bound(0.1, 0.05, 200).unwrap();
        assert!(close(r.slack(), (40f64.ln() / 400.0).sqrt(), 1e-15));
        let w = split_bound(&BoundInputs {
            m: 200,
            ..BoundInputs::default()
        })
        .unwrap();
        assert!(r.miscoverage_threshold < w.miscoverage_threshold);
    }

    #[test]
    fn second_moment_examples() {
        let base = BoundInputs {
            alpha: 0.1,
            c: 1.0,
            k2: 1.0,
            delta: 1.0,
            m: 64,
            ..BoundInputs::default()
        };
        let r = split_bound_second_moment(&base).unwrap();
        assert!(close(r.miscoverage_threshold, 1.1, 1e-12));
        assert!(r.vacuous);
        let quad = split_bound_second_moment(&BoundInputs { m: 256, ..base.clone() }).unwrap();
        assert!(close(quad.slack(), r.slack() / 2.0, 1e-12));
        let half = split_bound_second_moment(&BoundInputs { delta: 0.5, ..base }).unwrap();
        assert!(close(half.slack(), 2.0 * r.slack(), 1e-12));
    }

    #[test]
    fn jackknife_examples() {
        let r = jackknife_bound_exch(&hand_inputs()).unwrap();
        assert!(close(r.miscoverage_threshold, 0.805_627_947_8, 1e-9));
        assert!(close(r.failure_probability, 0.2, 1e-15));
        assert_bookkeeping(&r, 0.1);

        let s = jackknife_bound_shift(&BoundInputs {
            b_ratio: 1.2,
            ..hand_inputs()
        })
        .unwrap();
        assert!(close(s.miscoverage_threshold, 1.337_818_504_6, 1e-9));
        assert!(s.vacuous);

        // Zero stability and δ = 2e^{−2nt²} leave exactly t.
        let t = 0.07;
        let n = 300;
        let z = BoundInputs {
            n,
            delta: 2.0 * (-2.0 * n as f64 * t * t).exp(),
            stability: StabilityCurve::InverseN { scale: 0.0 },
            ..BoundInputs::default()
        };
        assert!(close(
            jackknife_bound_exch(&z).unwrap().miscoverage_threshold,
            0.1 + t,
            1e-12
        ));
    }

    #[test]
    fn shift_matches_exchangeable_stability_term() {
        let base = BoundInputs {
            b_ratio: 1.0,
            c: 0.0,
            l: 0.7,
            l_q: 0.7,
            ..hand_inputs()
        };
        let e = jackknife_bound_exch(&base).unwrap();
        let s = jackknife_bound_shift(&base).unwrap();
        assert_eq!(e.terms["stability"], s.terms["stability"]);
        assert_ne!(e.terms["dkw"], s.terms["weighted_dkw"]);
    }

    #[test]
    fn full_examples() {
        let r = full_bound_exch(&hand_inputs()).unwrap();
        assert!(close(r.miscoverage_threshold, 0.775_527_947_8, 1e-9));
        let s = full_bound_shift(&BoundInputs {
            b_ratio: 1.2,
            ..hand_inputs()
        })
        .unwrap();
        assert!(close(s.miscoverage_threshold, 1.307_718_504_6, 1e-9));
        assert!(close(s.failure_probability, 0.2, 1e-15));
        let z = full_bound_exch(&BoundInputs {
            stability: StabilityCurve::InverseN { scale: 0.0 },
            ..hand_inputs()
        })
        .unwrap();
        assert_eq!(z.terms["stability"], 0.0);
    }

    #[test]
    fn cv_plus_with_unit_folds_is_jackknife() {
        let inputs = BoundInputs {
            m: 1,
            ..ridge_inputs(500)
        };
        let cv = cv_plus_bound(&inputs).unwrap();
        let jk = jackknife_bound_exch(&inputs).unwrap();
        assert!(close(cv.miscoverage_threshold, jk.miscoverage_threshold, 1e-14));
        assert!(cv_plus_bound(&BoundInputs { m: 500, ..inputs }).is_err());
    }

    #[test]
    fn cv_plus_stability_linear_in_m() {
        let s = |m| {
            cv_plus_bound(&BoundInputs {
                m,
                stability: StabilityCurve::custom(|_| 0.001),
                ..ridge_inputs(1000)
            })
            .unwrap()
            .terms["stability"]
        };
        assert!(close(s(10), 10.0 * s(1), 1e-12));
    }

    #[test]
    fn cv_plus_ridge_slack_vanishes_for_small_folds() {
        // m = n^{1/4}: m/n → 0 and m·√n·c_{n−m} → 0.
        let slack = |n: usize| {
            let m = (n as f64).powf(0.25) as usize;
            cv_plus_bound(&BoundInputs { m, ..ridge_inputs(n) }).unwrap().slack()
        };
        // The stability part decays like n^{-1/4} here.
        let s = [slack(10_000), slack(1_000_000), slack(100_000_000)];
        assert!(s[0] > s[1] && s[1] > s[2] && s[2] < 0.15 * s[0], "{s:?}");
    }

    #[test]
    fn bian_examples() {
        let r = bian_cv_bound(0.05, 0.1, 10, 200).unwrap();
        assert!(close(r.miscoverage_threshold, 0.314_596_6, 1e-7));
        assert_bookkeeping(&r, 0.1);
        let one = bian_cv_bound(0.05, 0.1, 1, 200).unwrap();
        assert!(close(one.slack(), (2.0 * 10f64.ln() / 200.0).sqrt(), 1e-15));
        assert!(bian_cv_bound(0.05, 0.1, 10, usize::MAX / 2).unwrap().slack() < 1e-8);
    }

    #[test]
    fn comparison_bound_examples() {
        let wide = BoundInputs {
            gamma: 1e300,
            m: 50,
            ..ridge_inputs(1000)
        };
        let r = liang_comparison_bound(&wide).unwrap();
        assert!(close(r.slack(), 3.0 * ((1.0 / 0.05f64).ln() / 50.0).sqrt(), 1e-12));
        assert!(close(r.failure_probability, 0.15, 1e-9));

        let n = 1_000_000;
        let inputs = BoundInputs {
            gamma: 1.0,
            delta: 0.1,
            ..ridge_inputs(n)
        };
        let balanced = liang_balanced_bound(&inputs).unwrap();
        assert_eq!(balanced.parameters["m"], 251.0);
        let jk = jackknife_bound_exch(&inputs).unwrap();
        assert!(balanced.slack() > jk.slack());
    }

    #[test]
    fn rates() {
        let ns = [1_000usize, 10_000, 100_000, 1_000_000];
        for f in [
            jackknife_bound_exch,
            jackknife_bound_shift,
            full_bound_exch,
            full_bound_shift,
        ] {
            let scaled: Vec<f64> = ns
                .iter()
                .map(|&n| f(&ridge_inputs(n)).unwrap().slack() * (n as f64).sqrt())
                .collect();
            let (lo, hi) = scaled.iter().fold((f64::MAX, 0f64), |(a, b), &v| (a.min(v), b.max(v)));
            assert!(hi / lo < 1.5, "{scaled:?}");
        }
        let scaled: Vec<f64> = ns
            .iter()
            .map(|&n| liang_balanced_bound(&ridge_inputs(n)).unwrap().slack() * (n as f64).powf(0.2))
            .collect();
        let (lo, hi) = scaled.iter().fold((f64::MAX, 0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi / lo < 1.5, "{scaled:?}");
    }

    #[test]
    fn ridge_profile_root_n_rate() {
        // Both slack terms scale like n^{-1/2}, up to the c_{n−1} vs 1/n offset.
        let slack = |n| jackknife_bound_exch(&ridge_inputs(n)).unwrap().slack();
        let r = slack(10_000) / slack(100);
        assert!(r > 0.08 && r < 0.11, "{r}");
    }

    #[test]
    fn validation() {
        assert!(split_bound(&BoundInputs {
            b_ratio: 0.5,
            ..BoundInputs::default()
        })
        .is_err());
        assert!(split_bound(&BoundInputs {
            alpha: 1.0,
            ..BoundInputs::default()
        })
        .is_err());
        assert!(split_bound(&BoundInputs {
            m: 0,
            ..BoundInputs::default()
        })
        .is_err());
        assert!(jackknife_bound_exch(&BoundInputs {
            n: 1,
            ..BoundInputs::default()
        })
        .is_err());
        assert!(bian_cv_bound(0.1, 0.0, 2, 10).is_err());
        let b = BoundInputs::default().with_failure_budget(0.1);
        assert_eq!((b.epsilon, b.delta), (0.05, 0.05));
    }

    proptest! {
        #[test]
        fn split_monotonicity(m in 1usize..100_000, b in 1.0f64..5.0, c in 0.0f64..3.0, delta in 0.001f64..0.9) {
            let base = BoundInputs { m, b_ratio: b, c, delta, ..BoundInputs::default() };
            let t = |i: &BoundInputs| split_bound(i).unwrap().miscoverage_threshold;
            let here = t(&base);
            let more_m = t(&BoundInputs { m: m + 1, ..base.clone() });
            let more_b = t(&BoundInputs { b_ratio: b * 1.01, ..base.clone() });
            let more_c = t(&BoundInputs { c: c + 0.1, ..base.clone() });
            let more_delta = t(&BoundInputs { delta: delta * 1.05, ..base.clone() });
            prop_assert!(more_m < here);
            prop_assert!(more_b > here);
            prop_assert!(more_c > here);
            prop_assert!(more_delta < here);
        }

        #[test]
        fn stability_bounds_decrease_in_n(n in 10usize..1_000_000) {
            for f in [jackknife_bound_exch, jackknife_bound_shift, full_bound_exch, full_bound_shift] {
                let a = f(&ridge_inputs(n)).unwrap();
                let b = f(&ridge_inputs(n * 2)).unwrap();
                prop_assert!(b.miscoverage_threshold < a.miscoverage_threshold);
            }
        }

        #[test]
        fn bookkeeping_is_lossless(n in 10usize..100_000, alpha in 0.01f64..0.5, l in 0.0f64..5.0) {
            let inputs = BoundInputs { alpha, l, l_q: l, m: n / 2, ..ridge_inputs(n) };
            for r in all_bounds(&inputs, 2).unwrap().values() {
                let base = if r.name == "cv_plus_fold_concentration" { 2.0 * alpha } else { alpha };
                prop_assert!((r.miscoverage_threshold - base - r.slack()).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&r.failure_probability));
                prop_assert_eq!(r.vacuous, r.miscoverage_threshold >= 1.0 || r.failure_probability >= 1.0);
            }
        }
    }
}
