use std::time::Instant;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundResult;
use crate::conformal::{
    assign_folds, default_grid, jackknife_threshold, FullConformalForm, FullConformalPredictor, JackknifePlusPredictor,
    Method, MethodConfig, PredictionInterval, SplitConformalPredictor,
};
use crate::data::{split_with_mode, Dataset, SplitMode};
use crate::error::{invalid, Error, Result};
use crate::experiment::report::{deciles, ExperimentReport};
use crate::experiment::scenario::{Scenario, ScenarioSpec};
use crate::ratio::LikelihoodRatio;
use crate::ridge::{fit, LooFitter, RidgeConfig, RidgeModel};
use crate::rng::RngStream;
use crate::serde_ext;

/// A prediction-set rule trained on one dataset.
pub trait FittedPredictor: Send + Sync {
    fn covers(&self, x: &[f64], y: f64) -> Result<bool>;
    fn width(&self, x: &[f64]) -> Result<f64>;
    /// How many test points to measure widths on (widths can be costly).
    fn width_probes(&self) -> usize {
        usize::MAX
    }
}

/// Adapter for any closure producing an interval.
pub struct IntervalFn<F>(pub F);

impl<F> FittedPredictor for IntervalFn<F>
where
    F: Fn(&[f64]) -> Result<PredictionInterval> + Send + Sync,
{
    fn covers(&self, x: &[f64], y: f64) -> Result<bool> {
        Ok((self.0)(x)?.contains(y))
    }

    fn width(&self, x: &[f64]) -> Result<f64> {
        Ok((self.0)(x)?.width())
    }
}

impl FittedPredictor for SplitConformalPredictor {
    fn covers(&self, x: &[f64], y: f64) -> Result<bool> {
        Ok(self.interval(x)?.contains(y))
    }

    fn width(&self, x: &[f64]) -> Result<f64> {
        Ok(self.interval(x)?.width())
    }
}

impl FittedPredictor for JackknifePlusPredictor {
    fn covers(&self, x: &[f64], y: f64) -> Result<bool> {
        Ok(self.interval(x)?.contains(y))
    }

    fn width(&self, x: &[f64]) -> Result<f64> {
        Ok(self.interval(x)?.width())
    }
}

/// Interval `μ̂(x) ± q` with a fixed threshold.
struct CenteredInterval {
    model: RidgeModel,
    q: f64,
}

impl FittedPredictor for CenteredInterval {
    fn covers(&self, x: &[f64], y: f64) -> Result<bool> {
        Ok((y - self.model.predict(x)).abs() <= self.q)
    }

    fn width(&self, _x: &[f64]) -> Result<f64> {
        Ok(2.0 * self.q)
    }
}

/// Full conformal: membership is evaluated exactly at the test response,
/// width by counting grid members.
struct FullConformalRule {
    dataset: Dataset,
    config: RidgeConfig,
    alpha: f64,
    ratio: LikelihoodRatio,
    grid: Vec<f64>,
}

const FULL_WIDTH_PROBES: usize = 64;

impl FittedPredictor for FullConformalRule {
    fn covers(&self, x: &[f64], y: f64) -> Result<bool> {
        FullConformalPredictor::new(
            &self.dataset,
            x,
            &self.config,
            self.alpha,
            &self.ratio,
            FullConformalForm::Superset,
        )?
        .contains(y)
    }

    fn width(&self, x: &[f64]) -> Result<f64> {
        let set = FullConformalPredictor::new(
            &self.dataset,
            x,
            &self.config,
            self.alpha,
            &self.ratio,
            FullConformalForm::Superset,
        )?
        .evaluate_grid(&self.grid)?;
        Ok(set.approximate_width())
    }

    fn width_probes(&self) -> usize {
        FULL_WIDTH_PROBES
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: usize,
    pub seed: u64,
    pub pe: f64,
    pub pe_stderr: f64,
    #[serde(with = "serde_ext::ext_real")]
    pub median_width: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len() / 2;
    if values.len() % 2 == 1 {
        values[k]
    } else {
        values[k - 1] + (values[k] - values[k - 1]) / 2.0
    }
}

/// Monte Carlo miscoverage of a fixed predictor over `n_test` fresh
/// draws from `Q_X × P_{Y|X}`.
pub fn estimate_pe(
    predictor: &dyn FittedPredictor,
    scenario: &dyn Scenario,
    n_test: usize,
    rng: &RngStream,
) -> Result<TrialResult> {
    if n_test == 0 {
        return Err(invalid("n_test must be positive"));
    }
    let mut r = rng.rng();
    let test = scenario.sample_q(&mut r, n_test);
    let mut misses = 0usize;
    for z in &test {
        if !predictor.covers(&z.x, z.y)? {
            misses += 1;
        }
    }
    let mut widths = test
        .iter()
        .take(predictor.width_probes())
        .map(|z| predictor.width(&z.x))
        .collect::<Result<Vec<f64>>>()?;
    let pe = misses as f64 / n_test as f64;
    Ok(TrialResult {
        trial_id: 0,
        seed: rng.master_seed,
        pe,
        pe_stderr: (pe * (1.0 - pe) / n_test as f64).sqrt(),
        median_width: median(&mut widths),
    })
}

/// One replicated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: MethodConfig,
    pub scenario: ScenarioSpec,
    /// Training size; for split conformal, the proper-training part only.
    pub n_train: usize,
    /// Calibration size (split conformal only).
    pub n_cal: usize,
    pub replications: usize,
    pub n_test: usize,
    pub lambda: f64,
    /// Candidate grid size for full conformal widths.
    pub grid_points: usize,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if self.replications == 0 {
            return Err(invalid("replications must be at least 1"));
        }
        if self.n_test == 0 || self.n_train == 0 {
            return Err(invalid("n_train and n_test must be positive"));
        }
        if self.method.method == Method::Split && self.n_cal == 0 {
            return Err(invalid("split conformal needs a positive calibration size"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if let Method::CvPlus { folds } = self.method.method {
            if !self.n_train.is_multiple_of(folds) {
                return Err(invalid(format!(
                    "folds must divide n (n = {}, K = {folds})",
                    self.n_train
                )));
            }
        }
        if self.method.method == Method::Jackknife && self.method.weighted {
            return Err(invalid("the plain jackknife has no weighted form; use jaw"));
        }
        if self.method.method == Method::Full && self.grid_points < 2 {
            return Err(invalid("full conformal needs at least 2 grid points"));
        }
        Ok(())
    }

    /// Total samples drawn from `P` per trial.
    pub fn samples_per_trial(&self) -> usize {
        if self.method.method == Method::Split {
            self.n_train + self.n_cal
        } else {
            self.n_train
        }
    }
}

/// Trains the configured method on one draw of training data.
pub fn fit_method(
    config: &ExperimentConfig,
    scenario: &dyn Scenario,
    data: &Dataset,
    rng: &RngStream,
) -> Result<Box<dyn FittedPredictor>> {
    let ridge = RidgeConfig::new(config.lambda, scenario.dim(), scenario.b(), scenario.i_bound())?;
    let alpha = config.method.alpha;
    let ratio = if config.method.weighted || config.method.method == Method::Jaw {
        scenario.ratio().clone()
    } else {
        LikelihoodRatio::unweighted()
    };
    Ok(match config.method.method {
        Method::Split => {
            let spec = split_with_mode(data, config.n_train, rng, SplitMode::Ordered)?;
            let train = data.subset(&spec.train_indices)?;
            let cal = data.subset(&spec.cal_indices)?;
            Box::new(SplitConformalPredictor::new(&train, &cal, &ridge, alpha, &ratio)?)
        }
        Method::Full => Box::new(FullConformalRule {
            dataset: data.clone(),
            config: ridge,
            alpha,
            ratio,
            grid: default_grid(scenario.i_bound(), config.grid_points),
        }),
        Method::Jackknife => {
            let (model, q) = jackknife_threshold(data, &ridge, alpha)?;
            Box::new(CenteredInterval { model, q })
        }
        Method::JackknifePlus | Method::Jaw => Box::new(JackknifePlusPredictor::new(data, &ridge, alpha, &ratio)?),
        Method::JackknifePlusInflated { epsilon } => {
            Box::new(JackknifePlusPredictor::new(data, &ridge, alpha, &ratio)?.inflated(epsilon)?)
        }
        Method::CvPlus { folds } => {
            let folds = assign_folds(data.len(), folds, rng)?;
            Box::new(JackknifePlusPredictor::with_folds(data, &ridge, alpha, &folds, &ratio)?)
        }
    })
}

fn run_trial(config: &ExperimentConfig, scenario: &dyn Scenario, trial: usize) -> Result<TrialResult> {
    let stream = RngStream::new(config.master_seed, trial as u64);
    let data = scenario.training_set(&mut stream.derive(0).rng(), config.samples_per_trial())?;
    let predictor = fit_method(config, scenario, &data, &stream.derive(1))?;
    let mut result = estimate_pe(predictor.as_ref(), scenario, config.n_test, &stream.derive(2))?;
    result.trial_id = trial;
    result.seed = config.master_seed;
    Ok(result)
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

/// Runs `config.replications` independent trials on the scenario described
/// by `config.scenario`. `threads = 0` uses every core; the report does not
/// depend on it.
pub fn run_experiment(config: &ExperimentConfig, bounds: &[BoundResult], threads: usize) -> Result<ExperimentReport> {
    let scenario = config.scenario.build()?;
    run_experiment_with(config, &scenario, bounds, threads)
}

/// As [`run_experiment`] with an explicit scenario (`config.scenario` is
/// then only echoed).
pub fn run_experiment_with(
    config: &ExperimentConfig,
    scenario: &dyn Scenario,
    bounds: &[BoundResult],
    threads: usize,
) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let pool = thread_pool(threads)?;
    let mut trials = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|i| {
                run_trial(config, scenario, i).map_err(|e| Error::Trial {
                    trial: i,
                    seed: config.master_seed,
                    stream: i as u64,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    trials.sort_by_key(|t| t.trial_id);

    let pes: Vec<f64> = trials.iter().map(|t| t.pe).collect();
    let exceedance: IndexMap<String, f64> = bounds
        .iter()
        .map(|b| {
            let over = pes.iter().filter(|&&pe| pe > b.miscoverage_threshold).count();
            (b.name.clone(), over as f64 / pes.len() as f64)
        })
        .collect();
    Ok(ExperimentReport {
        config: serde_json::to_value(config)?,
        pe_deciles: deciles(&pes),
        trials,
        exceedance,
        bounds: bounds.to_vec(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// `max_i` over training points of the Q-frequency of
/// `|μ̂(X) − μ̂₋ᵢ(X)| > epsilon`.
pub fn estimate_nu(
    dataset: &Dataset,
    config: &RidgeConfig,
    scenario: &dyn Scenario,
    epsilon: f64,
    n_mc: usize,
    rng: &RngStream,
) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon must be nonnegative"));
    }
    if n_mc == 0 {
        return Err(invalid("n_mc must be positive"));
    }
    let full = fit(dataset, config)?;
    let loo = LooFitter::new(dataset, config)?;
    let xs = scenario.sample_q_x(&mut rng.rng(), n_mc);
    let full_preds: Vec<f64> = xs.iter().map(|x| full.predict(x)).collect();
    let worst = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let m = loo.model_without(i);
            xs.iter()
                .zip(&full_preds)
                .filter(|(x, f)| (m.predict(x) - **f).abs() > epsilon)
                .count()
        })
        .max()
        .unwrap_or(0);
    Ok(worst as f64 / n_mc as f64)
}

/// Kolmogorov–Smirnov check of `{1 − P_e}` against `Beta(k, m+1−k)`,
/// `k = ⌈(1−α)(m+1)⌉`: the exact law of split conformal's
/// training-conditional coverage with exchangeable continuous scores.
/// Returns the statistic and whether it clears the 1% critical value.
pub fn beta_oracle_check(report: &ExperimentReport, alpha: f64, m: usize) -> Result<(f64, bool)> {
    let config: ExperimentConfig = serde_json::from_value(report.config.clone())?;
    if config.method.method != Method::Split {
        return Err(invalid("oracle applies to split only"));
    }
    if config.n_test < 100 * m {
        return Err(invalid(format!("oracle needs n_test >= 100·m = {}", 100 * m)));
    }
    let k = ((1.0 - alpha) * (m + 1) as f64 - 1e-9).ceil();
    if k > m as f64 {
        return Err(invalid("alpha too small: the threshold is infinite"));
    }
    let beta = statrs::distribution::Beta::new(k, m as f64 + 1.0 - k).map_err(|e| invalid(e.to_string()))?;
    let mut cover: Vec<f64> = report.trials.iter().map(|t| 1.0 - t.pe).collect();
    cover.sort_by(f64::total_cmp);
    let r = cover.len() as f64;
    let d = cover
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let f = statrs::distribution::ContinuousCDF::cdf(&beta, c);
            (f - i as f64 / r).max((i + 1) as f64 / r - f)
        })
        .fold(0.0, f64::max);
    let critical = 1.628 / (r.sqrt() + 0.12 + 0.11 / r.sqrt());
    Ok((d, d < critical))
}
