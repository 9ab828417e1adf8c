use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute slack used when comparing cumulative weight to a level, so
/// that floating summation error does not move an order statistic.
pub const LEVEL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfinitySide {
    Pos,
    Neg,
}

/// Normalized weighted step function over scores, with an optional point
/// mass at `+∞` or `−∞`.
///
/// Equal scores are merged into a single atom carrying the summed weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEcdf {
    scores: Vec<f64>,
    weights: Vec<f64>,
    /// `cumulative[k]` = sum of `weights[..=k]`.
    cumulative: Vec<f64>,
    infinity_mass: f64,
    side: InfinitySide,
}

impl WeightedEcdf {
    /// Builds from raw nonnegative masses; everything is divided by
    /// `sum(masses) + infinity_mass`.
    pub fn from_masses(scores: &[f64], masses: &[f64], infinity_mass: f64, side: InfinitySide) -> Result<Self> {
        if scores.len() != masses.len() {
            return Err(invalid(format!(
                "scores and ratios differ in length ({} vs {})",
                scores.len(),
                masses.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(invalid("scores must not be NaN"));
        }
        if masses
            .iter()
            .chain(std::iter::once(&infinity_mass))
            .any(|m| !(*m >= 0.0) || m.is_infinite())
        {
            return Err(invalid("ratios must be finite and nonnegative"));
        }
        let total: f64 = masses.iter().sum::<f64>() + infinity_mass;
        if total <= 0.0 {
            return Err(Error::ZeroTotalWeight);
        }

        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

        let mut merged_scores: Vec<f64> = Vec::with_capacity(scores.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(scores.len());
        for &i in &order {
            let w = masses[i] / total;
            match merged_scores.last() {
                Some(&last) if last == scores[i] => *merged_weights.last_mut().unwrap() += w,
                _ => {
                    merged_scores.push(scores[i]);
                    merged_weights.push(w);
                }
            }
        }
        let mut acc = 0.0;
        let cumulative = merged_weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self {
            scores: merged_scores,
            weights: merged_weights,
            cumulative,
            infinity_mass: infinity_mass / total,
            side,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn infinity_mass(&self) -> f64 {
        self.infinity_mass
    }

    pub fn infinity_side(&self) -> InfinitySide {
        self.side
    }

    /// Sum of atom weights plus the infinity mass (1 up to rounding).
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0) + self.infinity_mass
    }

    /// Mass sitting below every finite score.
    fn floor_mass(&self) -> f64 {
        match self.side {
            InfinitySide::Neg => self.infinity_mass,
            InfinitySide::Pos => 0.0,
        }
    }

    /// `F(t)`: weight of atoms with score ≤ t, plus the `−∞` mass, plus the
    /// `+∞` mass only at `t = +∞`.
    pub fn cdf(&self, t: f64) -> f64 {
        let k = self.scores.partition_point(|&s| s <= t);
        let mut v = self.floor_mass();
        if k > 0 {
            v += self.cumulative[k - 1];
        }
        if self.side == InfinitySide::Pos && t == f64::INFINITY {
            v += self.infinity_mass;
        }
        v
    }

    /// Left limit `F(t⁻)`.
    pub fn cdf_left(&self, t: f64) -> f64 {
        let k = self.scores.partition_point(|&s| s < t);
        let mut v = self.floor_mass();
        if k > 0 {
            v += self.cumulative[k - 1];
        }
        v
    }

    /// Left-continuous generalized inverse `inf{t : F(t) ≥ level}`.
    pub fn quantile(&self, level: f64) -> f64 {
        let floor = self.floor_mass();
        let target = level - LEVEL_TOLERANCE;
        if floor >= target {
            return f64::NEG_INFINITY;
        }
        let k = self.cumulative.partition_point(|&c| floor + c < target);
        match self.scores.get(k) {
            Some(&s) => s,
            None => f64::INFINITY,
        }
    }

    /// `sup{t : F(t) ≤ level}`, the mirror image of [`quantile`]: it equals
    /// `−quantile_{1−level}` of the reflected distribution.
    ///
    /// [`quantile`]: WeightedEcdf::quantile
    pub fn upper_quantile(&self, level: f64) -> f64 {
        let floor = self.floor_mass();
        let target = level + LEVEL_TOLERANCE;
        if floor > target {
            return f64::NEG_INFINITY;
        }
        let k = self.cumulative.partition_point(|&c| floor + c <= target);
        match self.scores.get(k) {
            Some(&s) => s,
            None => f64::INFINITY,
        }
    }
}

/// `ŵ_i = r_i / Σ_j r_j`, no infinity mass.
pub fn build_hat_ecdf(scores: &[f64], ratios: &[f64]) -> Result<WeightedEcdf> {
    if scores.is_empty() {
        return Err(invalid("at least one score is required"));
    }
    WeightedEcdf::from_masses(scores, ratios, 0.0, InfinitySide::Pos)
}

/// `w_i = r_i / (r_test + Σ_j r_j)` on the atoms and
/// `w_test = r_test / (r_test + Σ_j r_j)` on the requested infinity.
pub fn build_test_weighted_ecdf(
    scores: &[f64],
    ratios: &[f64],
    ratio_at_test: f64,
    infinity_side: InfinitySide,
) -> Result<WeightedEcdf> {
    if scores.is_empty() {
        return Err(invalid("at least one score is required"));
    }
    WeightedEcdf::from_masses(scores, ratios, ratio_at_test, infinity_side)
}

pub fn eval_cdf(ecdf: &WeightedEcdf, t: f64) -> f64 {
    ecdf.cdf(t)
}

pub fn quantile(ecdf: &WeightedEcdf, level: f64) -> Result<f64> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(invalid(format!("quantile level must be in (0, 1], got {level}")));
    }
    Ok(ecdf.quantile(level))
}

/// `sup_x |F(x) − G(x)|` for a nondecreasing reference `G`.
///
/// Between atoms `F` is constant and `G` monotone, so the supremum is
/// attained at a one-sided limit at some atom or at an end probe.
/// `G(t⁻)` is taken as `G` evaluated at the next float below `t`.
pub fn sup_deviation<G>(ecdf: &WeightedEcdf, reference: G) -> f64
where
    G: Fn(f64) -> f64,
{
    let floor = ecdf.floor_mass();
    let mut worst = (floor - reference(f64::NEG_INFINITY)).abs();
    let mut below = floor;
    for (k, &s) in ecdf.scores.iter().enumerate() {
        if s.is_finite() {
            worst = worst.max((below - reference(s.next_down())).abs());
        }
        let at = floor + ecdf.cumulative[k];
        if s.is_finite() {
            worst = worst.max((at - reference(s)).abs());
        }
        below = at;
    }
    worst.max((below - reference(f64::MAX)).abs())
}
