use crate::conformal::{check_alpha, PredictionInterval};
use crate::data::{abs_residual_score, Dataset};
use crate::error::{invalid, Result};
use crate::ratio::LikelihoodRatio;
use crate::ridge::{fit, RidgeConfig, RidgeModel};
use crate::weighted::{build_test_weighted_ecdf, InfinitySide, LEVEL_TOLERANCE};

fn interval_around(center: f64, q: f64) -> PredictionInterval {
    if q == f64::INFINITY {
        PredictionInterval::whole_line()
    } else {
        PredictionInterval::new(center - q, center + q)
    }
}

/// Split conformal interval at `x`: fit on `trainset`, score `calset`, and
/// threshold at the `1 − alpha` quantile of the test-weighted ECDF with
/// mass `w_test` at `+∞`.
pub fn split_conformal(
    trainset: &Dataset,
    calset: &Dataset,
    x: &[f64],
    config: &RidgeConfig,
    alpha: f64,
    ratio: &LikelihoodRatio,
) -> Result<PredictionInterval> {
    check_alpha(alpha)?;
    let model = fit(trainset, config)?;
    let scores: Vec<f64> = calset
        .samples()
        .iter()
        .map(|s| abs_residual_score(s.y, model.predict(&s.x)))
        .collect();
    let ratios = ratio.eval_many(calset.samples().iter().map(|s| s.x.as_slice()))?;
    let test_ratio = ratio.eval(x)?;
    let ecdf = build_test_weighted_ecdf(&scores, &ratios, test_ratio, InfinitySide::Pos)?;
    Ok(interval_around(model.predict(x), ecdf.quantile(1.0 - alpha)))
}

/// Split conformal with the model and calibration scores fixed, answering
/// many test points. Only the test weight changes from point to point, so
/// each query is a binary search over prefix sums of calibration ratios.
#[derive(Debug, Clone)]
pub struct SplitConformalPredictor {
    model: RidgeModel,
    sorted_scores: Vec<f64>,
    prefix_mass: Vec<f64>,
    level: f64,
    ratio: LikelihoodRatio,
}

impl SplitConformalPredictor {
    pub fn new(
        trainset: &Dataset,
        calset: &Dataset,
        config: &RidgeConfig,
        alpha: f64,
        ratio: &LikelihoodRatio,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if calset.is_empty() {
            return Err(invalid("calibration set is empty"));
        }
        let model = fit(trainset, config)?;
        let ratios = ratio.eval_many(calset.samples().iter().map(|s| s.x.as_slice()))?;
        let mut pairs: Vec<(f64, f64)> = calset
            .samples()
            .iter()
            .zip(ratios)
            .map(|(s, r)| (abs_residual_score(s.y, model.predict(&s.x)), r))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let prefix_mass = pairs
            .iter()
            .map(|p| {
                acc += p.1;
                acc
            })
            .collect();
        Ok(Self {
            model,
            sorted_scores: pairs.into_iter().map(|p| p.0).collect(),
            prefix_mass,
            level: 1.0 - alpha,
            ratio: ratio.clone(),
        })
    }

    pub fn model(&self) -> &RidgeModel {
        &self.model
    }

    /// Score threshold for a test point whose likelihood ratio is `test_ratio`.
    pub fn threshold(&self, test_ratio: f64) -> f64 {
        let total = self.prefix_mass.last().copied().unwrap_or(0.0) + test_ratio;
        if total <= 0.0 {
            return f64::INFINITY;
        }
        let target = self.level - LEVEL_TOLERANCE;
        let k = self.prefix_mass.partition_point(|&c| c / total < target);
        // Tied scores share one atom; the first index reaching the level
        // already carries the tied score.
        self.sorted_scores.get(k).copied().unwrap_or(f64::INFINITY)
    }

    pub fn interval(&self, x: &[f64]) -> Result<PredictionInterval> {
        let r = self.ratio.eval(x)?;
        Ok(interval_around(self.model.predict(x), self.threshold(r)))
    }
}
