use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::conformal::{check_alpha, PredictionInterval};
use crate::data::{abs_residual_score, Dataset};
use crate::error::{invalid, Result};
use crate::ratio::LikelihoodRatio;
use crate::ridge::{fit, fit_samples, LooFitter, RidgeConfig, RidgeModel};
use crate::rng::RngStream;
use crate::weighted::{InfinitySide, WeightedEcdf};

/// Jackknife+ interval from precomputed pieces: `loo_preds[i]` is the
/// held-out model's prediction at the test point, `loo_residuals[i]` its
/// residual on sample i, and `ratios[i]` the sample's likelihood ratio.
///
/// The lower end is `sup{t : F⁻(t) ≤ α}` over `S⁻ ∪ {−∞}`, the upper end
/// `inf{t : F⁺(t) ≥ 1−α}` over `S⁺ ∪ {+∞}`; the test ratio sits on the
/// infinite atom of each side.
pub fn jackknife_plus_from_parts(
    loo_preds: &[f64],
    loo_residuals: &[f64],
    ratios: &[f64],
    test_ratio: f64,
    alpha: f64,
) -> Result<PredictionInterval> {
    check_alpha(alpha)?;
    if loo_preds.len() != loo_residuals.len() || loo_preds.len() != ratios.len() {
        return Err(invalid("leave-one-out inputs differ in length"));
    }
    if loo_preds.is_empty() {
        return Err(invalid("jackknife+ needs at least one leave-one-out fit"));
    }
    let minus: Vec<f64> = loo_preds.iter().zip(loo_residuals).map(|(m, r)| m - r).collect();
    let plus: Vec<f64> = loo_preds.iter().zip(loo_residuals).map(|(m, r)| m + r).collect();
    let lower = WeightedEcdf::from_masses(&minus, ratios, test_ratio, InfinitySide::Neg)?.upper_quantile(alpha);
    let upper = WeightedEcdf::from_masses(&plus, ratios, test_ratio, InfinitySide::Pos)?.quantile(1.0 - alpha);
    Ok(PredictionInterval::new(lower, upper))
}

/// Leave-one-out (or leave-fold-out) models with their held-out residuals,
/// reusable across test points.
#[derive(Debug, Clone)]
pub struct JackknifePlusPredictor {
    models: Vec<RidgeModel>,
    /// Index into `models` for each training sample.
    model_of: Vec<usize>,
    residuals: Vec<f64>,
    ratios: Vec<f64>,
    alpha: f64,
    epsilon: f64,
    ratio: LikelihoodRatio,
}

impl JackknifePlusPredictor {
    /// Jackknife+ (or JAW, when `ratio` is not unweighted).
    pub fn new(dataset: &Dataset, config: &RidgeConfig, alpha: f64, ratio: &LikelihoodRatio) -> Result<Self> {
        check_alpha(alpha)?;
        let loo = LooFitter::new(dataset, config)?;
        let models: Vec<RidgeModel> = (0..dataset.len())
            .into_par_iter()
            .map(|i| loo.model_without(i))
            .collect();
        let residuals = dataset
            .samples()
            .iter()
            .zip(&models)
            .map(|(s, m)| abs_residual_score(s.y, m.predict(&s.x)))
            .collect();
        Ok(Self {
            model_of: (0..models.len()).collect(),
            models,
            residuals,
            ratios: ratio.eval_many(dataset.samples().iter().map(|s| s.x.as_slice()))?,
            alpha,
            epsilon: 0.0,
            ratio: ratio.clone(),
        })
    }

    /// CV+ with explicit folds (each a list of sample indices, together a
    /// partition of `0..n`).
    pub fn with_folds(
        dataset: &Dataset,
        config: &RidgeConfig,
        alpha: f64,
        folds: &[Vec<usize>],
        ratio: &LikelihoodRatio,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let n = dataset.len();
        let mut model_of = vec![usize::MAX; n];
        for (k, fold) in folds.iter().enumerate() {
            for &i in fold {
                if i >= n || model_of[i] != usize::MAX {
                    return Err(invalid("folds must partition the sample indices"));
                }
                model_of[i] = k;
            }
        }
        if folds.len() < 2 || model_of.contains(&usize::MAX) {
            return Err(invalid("folds must partition the sample indices into at least 2 parts"));
        }
        let models: Vec<RidgeModel> = (0..folds.len())
            .into_par_iter()
            .map(|k| {
                let kept: Vec<_> = (0..n)
                    .filter(|&i| model_of[i] != k)
                    .map(|i| dataset.samples()[i].clone())
                    .collect();
                fit_samples(&kept, config)
            })
            .collect();
        let residuals = dataset
            .samples()
            .iter()
            .zip(&model_of)
            .map(|(s, &k)| abs_residual_score(s.y, models[k].predict(&s.x)))
            .collect();
        Ok(Self {
            models,
            model_of,
            residuals,
            ratios: ratio.eval_many(dataset.samples().iter().map(|s| s.x.as_slice()))?,
            alpha,
            epsilon: 0.0,
            ratio: ratio.clone(),
        })
    }

    /// Widen every interval by `epsilon` on both sides.
    pub fn inflated(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(invalid("inflation epsilon must be nonnegative"));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// Held-out predictions at `x`, one per training sample.
    pub fn loo_predictions(&self, x: &[f64]) -> Vec<f64> {
        let at_x: Vec<f64> = self.models.iter().map(|m| m.predict(x)).collect();
        self.model_of.iter().map(|&k| at_x[k]).collect()
    }

    /// Largest `|μ̂(x) − μ̂₋ᵢ(x)|` against a reference full-data model.
    pub fn max_deviation(&self, full: &RidgeModel, x: &[f64]) -> f64 {
        let f = full.predict(x);
        self.models.iter().map(|m| (m.predict(x) - f).abs()).fold(0.0, f64::max)
    }

    pub fn interval(&self, x: &[f64]) -> Result<PredictionInterval> {
        let test_ratio = self.ratio.eval(x)?;
        let base = jackknife_plus_from_parts(
            &self.loo_predictions(x),
            &self.residuals,
            &self.ratios,
            test_ratio,
            self.alpha,
        )?;
        Ok(if self.epsilon > 0.0 {
            base.inflate(self.epsilon)
        } else {
            base
        })
    }
}

pub fn jackknife_plus(dataset: &Dataset, x: &[f64], config: &RidgeConfig, alpha: f64) -> Result<PredictionInterval> {
    JackknifePlusPredictor::new(dataset, config, alpha, &LikelihoodRatio::unweighted())?.interval(x)
}

/// Likelihood-ratio weighted jackknife+.
pub fn jaw(
    dataset: &Dataset,
    x: &[f64],
    config: &RidgeConfig,
    alpha: f64,
    ratio: &LikelihoodRatio,
) -> Result<PredictionInterval> {
    JackknifePlusPredictor::new(dataset, config, alpha, ratio)?.interval(x)
}

pub fn jackknife_plus_inflated(
    dataset: &Dataset,
    x: &[f64],
    config: &RidgeConfig,
    alpha: f64,
    epsilon: f64,
) -> Result<PredictionInterval> {
    JackknifePlusPredictor::new(dataset, config, alpha, &LikelihoodRatio::unweighted())?
        .inflated(epsilon)?
        .interval(x)
}

/// Seeded assignment of `n` samples to `k` equal folds.
pub fn assign_folds(n: usize, k: usize, rng: &RngStream) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(invalid("cv_plus requires at least 2 folds"));
    }
    if !n.is_multiple_of(k) {
        return Err(invalid(format!("folds must divide n (n = {n}, K = {k})")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng.rng());
    Ok(order.chunks(n / k).map(|c| c.to_vec()).collect())
}

pub fn cv_plus(
    dataset: &Dataset,
    x: &[f64],
    config: &RidgeConfig,
    alpha: f64,
    k: usize,
    rng: &RngStream,
) -> Result<PredictionInterval> {
    let folds = assign_folds(dataset.len(), k, rng)?;
    cv_plus_with_folds(dataset, x, config, alpha, &folds)
}

pub fn cv_plus_with_folds(
    dataset: &Dataset,
    x: &[f64],
    config: &RidgeConfig,
    alpha: f64,
    folds: &[Vec<usize>],
) -> Result<PredictionInterval> {
    JackknifePlusPredictor::with_folds(dataset, config, alpha, folds, &LikelihoodRatio::unweighted())?.interval(x)
}

/// Leave-one-out residual threshold around the full-data fit.
pub fn jackknife_threshold(dataset: &Dataset, config: &RidgeConfig, alpha: f64) -> Result<(RidgeModel, f64)> {
    check_alpha(alpha)?;
    let loo = LooFitter::new(dataset, config)?;
    let residuals: Vec<f64> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let s = &dataset.samples()[i];
            abs_residual_score(s.y, loo.model_without(i).predict(&s.x))
        })
        .collect();
    let ones = vec![1.0; residuals.len()];
    let q = WeightedEcdf::from_masses(&residuals, &ones, 1.0, InfinitySide::Pos)?.quantile(1.0 - alpha);
    Ok((fit(dataset, config)?, q))
}

pub fn jackknife_plain(dataset: &Dataset, x: &[f64], config: &RidgeConfig, alpha: f64) -> Result<PredictionInterval> {
    let (model, q) = jackknife_threshold(dataset, config, alpha)?;
    let c = model.predict(x);
    Ok(if q == f64::INFINITY {
        PredictionInterval::whole_line()
    } else {
        PredictionInterval::new(c - q, c + q)
    })
}
