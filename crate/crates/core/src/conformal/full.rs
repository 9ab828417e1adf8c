use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::check_alpha;
use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::ratio::LikelihoodRatio;
use crate::ridge::{AugmentedRefit, RidgeConfig};
use crate::serde_ext;
use crate::weighted::{InfinitySide, WeightedEcdf};

/// Grid size used when the caller does not supply candidate responses.
pub const DEFAULT_GRID_POINTS: usize = 513;

/// Which reference set the test score is ranked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullConformalForm {
    /// Training scores plus a `w_test` atom at `+∞`.
    #[default]
    Superset,
    /// Training scores plus the candidate's own score carrying `w_test`.
    ExactRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub y: f64,
    pub score: f64,
    #[serde(with = "serde_ext::ext_real")]
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub grid: Vec<f64>,
    pub membership: Vec<bool>,
    pub threshold_trace: Vec<GridPoint>,
}

impl PredictionSet {
    pub fn member_count(&self) -> usize {
        self.membership.iter().filter(|&&m| m).count()
    }

    /// Lebesgue measure of the set, treating each member grid point as
    /// covering its share of the grid spacing.
    pub fn approximate_width(&self) -> f64 {
        if self.grid.len() < 2 {
            return 0.0;
        }
        let step = (self.grid[self.grid.len() - 1] - self.grid[0]) / (self.grid.len() - 1) as f64;
        self.member_count() as f64 * step
    }

    /// Two-column `y,member` export.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["y", "member"])?;
        for (y, m) in self.grid.iter().zip(&self.membership) {
            w.write_record([y.to_string(), (*m as u8).to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// `n` equally spaced points over `[−I, I]`.
pub fn default_grid(i_bound: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![0.0];
    }
    (0..points)
        .map(|k| -i_bound + 2.0 * i_bound * k as f64 / (points - 1) as f64)
        .collect()
}

/// Full conformal machinery for one test covariate `x`: the augmented
/// refit `β(y) = β₀ + y v` plus the weights, so any candidate `y` can be
/// tested exactly.
#[derive(Debug, Clone)]
pub struct FullConformalPredictor {
    labels: Vec<f64>,
    /// Prediction at training point i is `intercepts[i] + y * slopes[i]`.
    intercepts: Vec<f64>,
    slopes: Vec<f64>,
    test_intercept: f64,
    test_slope: f64,
    ratios: Vec<f64>,
    test_ratio: f64,
    level: f64,
    form: FullConformalForm,
    i_bound: f64,
}

impl FullConformalPredictor {
    pub fn new(
        dataset: &Dataset,
        x: &[f64],
        config: &RidgeConfig,
        alpha: f64,
        ratio: &LikelihoodRatio,
        form: FullConformalForm,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let refit = AugmentedRefit::new(dataset, config, x)?;
        let (intercepts, slopes): (Vec<f64>, Vec<f64>) = dataset
            .samples()
            .iter()
            .map(|s| refit.prediction_coefficients(&s.x))
            .unzip();
        let (test_intercept, test_slope) = refit.prediction_coefficients(x);
        Ok(Self {
            labels: dataset.samples().iter().map(|s| s.y).collect(),
            intercepts,
            slopes,
            test_intercept,
            test_slope,
            ratios: ratio.eval_many(dataset.samples().iter().map(|s| s.x.as_slice()))?,
            test_ratio: ratio.eval(x)?,
            level: 1.0 - alpha,
            form,
            i_bound: config.i_bound,
        })
    }

    /// Candidate's own score and the threshold it is compared against.
    pub fn score_and_threshold(&self, y: f64) -> Result<(f64, f64)> {
        let scores: Vec<f64> = self
            .labels
            .iter()
            .zip(self.intercepts.iter().zip(&self.slopes))
            .map(|(yi, (a, g))| (yi - (a + y * g)).abs())
            .collect();
        let own = (y - (self.test_intercept + y * self.test_slope)).abs();
        let ecdf = match self.form {
            FullConformalForm::Superset => {
                WeightedEcdf::from_masses(&scores, &self.ratios, self.test_ratio, InfinitySide::Pos)?
            }
            FullConformalForm::ExactRank => {
                let mut all = scores;
                all.push(own);
                let mut masses = self.ratios.clone();
                masses.push(self.test_ratio);
                WeightedEcdf::from_masses(&all, &masses, 0.0, InfinitySide::Pos)?
            }
        };
        Ok((own, ecdf.quantile(self.level)))
    }

    pub fn contains(&self, y: f64) -> Result<bool> {
        if y.abs() > self.i_bound {
            return Ok(false);
        }
        let (s, q) = self.score_and_threshold(y)?;
        Ok(s <= q)
    }

    pub fn evaluate_grid(&self, grid: &[f64]) -> Result<PredictionSet> {
        if grid.is_empty() {
            return Err(invalid("grid must be nonempty"));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("grid must be strictly increasing"));
        }
        let trace: Vec<GridPoint> = grid
            .par_iter()
            .map(|&y| -> Result<GridPoint> {
                if !(y.abs() <= self.i_bound) {
                    return Ok(GridPoint {
                        y,
                        score: f64::NAN,
                        threshold: f64::NAN,
                        warning: Some(format!("candidate outside [-{0}, {0}] rejected", self.i_bound)),
                    });
                }
                let (score, threshold) = self.score_and_threshold(y)?;
                Ok(GridPoint {
                    y,
                    score,
                    threshold,
                    warning: None,
                })
            })
            .collect::<Result<_>>()?;
        let membership = trace
            .iter()
            .map(|g| g.warning.is_none() && g.score <= g.threshold)
            .collect();
        Ok(PredictionSet {
            grid: grid.to_vec(),
            membership,
            threshold_trace: trace,
        })
    }
}

/// Full conformal set over `grid` (superset form).
pub fn full_conformal(
    dataset: &Dataset,
    x: &[f64],
    config: &RidgeConfig,
    alpha: f64,
    ratio: &LikelihoodRatio,
    grid: &[f64],
) -> Result<PredictionSet> {
    full_conformal_with_form(dataset, x, config, alpha, ratio, grid, FullConformalForm::Superset)
}

pub fn full_conformal_with_form(
    dataset: &Dataset,
    x: &[f64],
    config: &RidgeConfig,
    alpha: f64,
    ratio: &LikelihoodRatio,
    grid: &[f64],
    form: FullConformalForm,
) -> Result<PredictionSet> {
    FullConformalPredictor::new(dataset, x, config, alpha, ratio, form)?.evaluate_grid(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::ridge::fit;
    use crate::rng::RngStream;
    use crate::weighted::build_test_weighted_ecdf;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_bounded(seed: u64, n: usize) -> Dataset {
        let mut r = RngStream::new(seed, 3).rng();
        let samples = (0..n)
            .map(|_| {
                let x = vec![r.random_range(-0.7..0.7), r.random_range(-0.7..0.7)];
                let y = 0.8 * x[0] - 0.3 * x[1] + r.random_range(-0.5..0.5);
                Sample::new(x, y)
            })
            .collect();
        Dataset::new(samples, 2, 1.0, 2.0).unwrap()
    }

    #[test]
    fn zero_predictor_limit() {
        let d = random_bounded(4, 19);
        let cfg = RidgeConfig::for_dataset(&d, 1e9).unwrap();
        let grid = default_grid(2.0, 257);
        let alpha = 0.2;
        let set = full_conformal(&d, &[0.3, 0.1], &cfg, alpha, &LikelihoodRatio::unweighted(), &grid).unwrap();
        let abs_y: Vec<f64> = d.samples().iter().map(|s| s.y.abs()).collect();
        let q = build_test_weighted_ecdf(&abs_y, &[1.0; 19], 1.0, InfinitySide::Pos)
            .unwrap()
            .quantile(1.0 - alpha);
        for (y, m) in set.grid.iter().zip(&set.membership) {
            if (y.abs() - q).abs() > 1e-6 {
                assert_eq!(*m, y.abs() <= q, "y = {y}");
            }
        }
    }

    #[test]
    fn single_sample_is_whole_grid() {
        let d = Dataset::new(vec![Sample::new(vec![0.2, 0.2], 0.4)], 2, 1.0, 2.0).unwrap();
        let cfg = RidgeConfig::for_dataset(&d, 0.5).unwrap();
        let grid = default_grid(2.0, 33);
        let set = full_conformal(&d, &[0.1, 0.0], &cfg, 0.4, &LikelihoodRatio::unweighted(), &grid).unwrap();
        assert!(set.membership.iter().all(|&m| m));
        assert!(set.threshold_trace.iter().all(|g| g.threshold == f64::INFINITY));
    }

    #[test]
    fn out_of_range_candidates_rejected() {
        let d = random_bounded(1, 10);
        let cfg = RidgeConfig::for_dataset(&d, 0.5).unwrap();
        let set = full_conformal(
            &d,
            &[0.0, 0.0],
            &cfg,
            0.5,
            &LikelihoodRatio::unweighted(),
            &[-3.0, 0.0, 3.0],
        )
        .unwrap();
        assert!(!set.membership[0] && !set.membership[2]);
        assert!(set.threshold_trace[0].warning.is_some());
        assert!(set.threshold_trace[1].warning.is_none());
        assert!(full_conformal(&d, &[0.0, 0.0], &cfg, 0.5, &LikelihoodRatio::unweighted(), &[0.0, 0.0]).is_err());
        assert!(full_conformal(&d, &[0.0, 0.0], &cfg, 0.5, &LikelihoodRatio::unweighted(), &[]).is_err());
    }

    #[test]
    fn matches_naive_refit() {
        let d = random_bounded(2, 12);
        let cfg = RidgeConfig::for_dataset(&d, 0.3).unwrap();
        let x = [0.25, -0.4];
        let alpha = 0.25;
        let grid = default_grid(2.0, 41);
        let set = full_conformal(&d, &x, &cfg, alpha, &LikelihoodRatio::unweighted(), &grid).unwrap();
        for (k, &y) in grid.iter().enumerate() {
            let aug = d.with_sample(Sample::new(x.to_vec(), y)).unwrap();
            let m = fit(&aug, &cfg).unwrap();
            let scores: Vec<f64> = d.samples().iter().map(|s| (s.y - m.predict(&s.x)).abs()).collect();
            let q = build_test_weighted_ecdf(&scores, &[1.0; 12], 1.0, InfinitySide::Pos)
                .unwrap()
                .quantile(1.0 - alpha);
            let own = (y - m.predict(&x)).abs();
            if (own - q).abs() > 1e-9 {
                assert_eq!(set.membership[k], own <= q);
            }
        }
    }

    #[test]
    fn csv_export() {
        let set = PredictionSet {
            grid: vec![-1.0, 0.0, 1.0],
            membership: vec![false, true, false],
            threshold_trace: vec![],
        };
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "y,member\n-1,0\n0,1\n1,0\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn superset_contains_exact_rank(seed in any::<u64>(), n in 2usize..25, alpha in 0.05f64..0.5) {
            let d = random_bounded(seed, n);
            let cfg = RidgeConfig::for_dataset(&d, 0.2).unwrap();
            let grid = default_grid(2.0, 65);
            let ratio = LikelihoodRatio::bounded(2.0, |x: &[f64]| 1.0 + x[0].abs()).unwrap();
            let sup = full_conformal_with_form(&d, &[0.1, 0.3], &cfg, alpha, &ratio, &grid, FullConformalForm::Superset).unwrap();
            let exact = full_conformal_with_form(&d, &[0.1, 0.3], &cfg, alpha, &ratio, &grid, FullConformalForm::ExactRank).unwrap();
            for (a, b) in sup.membership.iter().zip(&exact.membership) {
                prop_assert!(*a || !*b);
            }
        }

        #[test]
        fn unit_ratio_reproduces_unweighted(seed in any::<u64>(), n in 1usize..25, alpha in 0.05f64..0.5) {
            let d = random_bounded(seed, n);
            let cfg = RidgeConfig::for_dataset(&d, 0.2).unwrap();
            let grid = default_grid(2.0, 65);
            let ones = LikelihoodRatio::bounded(1.0, |_: &[f64]| 1.0).unwrap();
            let a = full_conformal(&d, &[0.1, 0.3], &cfg, alpha, &ones, &grid).unwrap();
            let b = full_conformal(&d, &[0.1, 0.3], &cfg, alpha, &LikelihoodRatio::unweighted(), &grid).unwrap();
            prop_assert_eq!(a.membership, b.membership);
        }

        #[test]
        fn monotone_in_alpha(seed in any::<u64>(), a1 in 0.05f64..0.5, a2 in 0.05f64..0.5) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let d = random_bounded(seed, 15);
            let cfg = RidgeConfig::for_dataset(&d, 0.2).unwrap();
            let grid = default_grid(2.0, 65);
            let r = LikelihoodRatio::unweighted();
            let wide = full_conformal(&d, &[0.1, 0.3], &cfg, lo, &r, &grid).unwrap();
            let narrow = full_conformal(&d, &[0.1, 0.3], &cfg, hi, &r, &grid).unwrap();
            for (w, n) in wide.membership.iter().zip(&narrow.membership) {
                prop_assert!(*w || !*n);
            }
        }
    }
}
