//! Ridge regression base learner with its uniform-stability and
//! bi-Lipschitz constants, closed-form refits, and empirical audits of the
//! stability assumptions.
//!
//! The objective is `(1/n) Σ (y_i − βᵀx_i)² + λ‖β‖²`, i.e. the normal
//! equations `(XᵀX/n + λI) β = Xᵀy/n`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{l2_norm, Dataset, Sample};
use crate::error::{invalid, Error, Result};
use crate::experiment::Scenario;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub lambda: f64,
    pub p: usize,
    pub b: f64,
    pub i_bound: f64,
}

impl RidgeConfig {
    pub fn new(lambda: f64, p: usize, b: f64, i_bound: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        if p == 0 || !(b > 0.0) || !(i_bound > 0.0) {
            return Err(invalid("p, b and I must be positive"));
        }
        Ok(Self { lambda, p, b, i_bound })
    }

    /// Config matching a dataset's declared dimension and bounds.
    pub fn for_dataset(dataset: &Dataset, lambda: f64) -> Result<Self> {
        Self::new(lambda, dataset.p(), dataset.b(), dataset.i_bound())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub beta: Vec<f64>,
}

impl RidgeModel {
    pub fn zeros(p: usize) -> Self {
        Self { beta: vec![0.0; p] }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.beta, x)
    }
}

pub fn predict(model: &RidgeModel, x: &[f64]) -> f64 {
    model.predict(x)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `Σ x_i x_iᵀ` and `Σ y_i x_i`.
fn gram(samples: &[Sample], p: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut g = DMatrix::<f64>::zeros(p, p);
    let mut c = DVector::<f64>::zeros(p);
    for s in samples {
        for a in 0..p {
            c[a] += s.y * s.x[a];
            for b in 0..=a {
                g[(a, b)] += s.x[a] * s.x[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(b, a)] = g[(a, b)];
        }
    }
    (g, c)
}

fn spd_inverse(m: DMatrix<f64>) -> DMatrix<f64> {
    m.cholesky()
        .expect("ridge normal matrix is positive definite for lambda > 0")
        .inverse()
}

fn solve_normal(samples: &[Sample], p: usize, lambda: f64) -> RidgeModel {
    let n = samples.len() as f64;
    let (mut g, c) = gram(samples, p);
    for a in 0..p {
        g[(a, a)] += n * lambda;
    }
    let beta = g
        .cholesky()
        .expect("ridge normal matrix is positive definite for lambda > 0")
        .solve(&c);
    RidgeModel {
        beta: beta.iter().copied().collect(),
    }
}

fn check_dims(dataset: &Dataset, config: &RidgeConfig) -> Result<()> {
    if dataset.p() != config.p {
        return Err(invalid(format!(
            "dataset has p = {} but ridge config expects p = {}",
            dataset.p(),
            config.p
        )));
    }
    Ok(())
}

pub fn fit(dataset: &Dataset, config: &RidgeConfig) -> Result<RidgeModel> {
    check_dims(dataset, config)?;
    Ok(solve_normal(dataset.samples(), config.p, config.lambda))
}

/// Fit on raw samples (no bound checks); used by the fold-out refits.
pub(crate) fn fit_samples(samples: &[Sample], config: &RidgeConfig) -> RidgeModel {
    solve_normal(samples, config.p, config.lambda)
}

/// Leave-one-out refits via a rank-one downdate of the shared matrix
/// `M = XᵀX + (n−1)λI`:
/// `β₋ᵢ = (M − x_i x_iᵀ)⁻¹ (Xᵀy − y_i x_i)`.
#[derive(Debug, Clone)]
pub struct LooFitter {
    m_inv: DMatrix<f64>,
    xty: DVector<f64>,
    samples: Vec<Sample>,
}

impl LooFitter {
    pub fn new(dataset: &Dataset, config: &RidgeConfig) -> Result<Self> {
        check_dims(dataset, config)?;
        let n = dataset.len();
        if n < 2 {
            return Err(invalid("leave-one-out refits need n >= 2"));
        }
        let (mut g, xty) = gram(dataset.samples(), config.p);
        for a in 0..config.p {
            g[(a, a)] += (n - 1) as f64 * config.lambda;
        }
        Ok(Self {
            m_inv: spd_inverse(g),
            xty,
            samples: dataset.samples().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn model_without(&self, i: usize) -> RidgeModel {
        let s = &self.samples[i];
        let x = DVector::from_column_slice(&s.x);
        let v = &self.m_inv * &x;
        let denom = 1.0 - x.dot(&v);
        let rhs = &self.xty - &x * s.y;
        let base = &self.m_inv * &rhs;
        let beta = base + &v * (v.dot(&rhs) / denom);
        RidgeModel {
            beta: beta.iter().copied().collect(),
        }
    }

    pub fn all_models(&self) -> Vec<RidgeModel> {
        (0..self.len()).map(|i| self.model_without(i)).collect()
    }
}

/// Model trained without sample `i` (fast rank-one path).
pub fn fit_loo(dataset: &Dataset, config: &RidgeConfig, i: usize) -> Result<RidgeModel> {
    if i >= dataset.len() {
        return Err(invalid(format!("index {i} out of range for n = {}", dataset.len())));
    }
    Ok(LooFitter::new(dataset, config)?.model_without(i))
}

/// Model trained without sample `i` by refitting from scratch.
pub fn fit_loo_naive(dataset: &Dataset, config: &RidgeConfig, i: usize) -> Result<RidgeModel> {
    if dataset.len() < 2 {
        return Err(invalid("leave-one-out refits need n >= 2"));
    }
    fit(&dataset.without(i)?, config)
}

/// Refit on `D ∪ (x, y)` for every candidate `y` at once. The augmented
/// normal matrix does not depend on `y`, so `β(y) = β₀ + y·v` exactly.
#[derive(Debug, Clone)]
pub struct AugmentedRefit {
    beta0: Vec<f64>,
    slope: Vec<f64>,
}

impl AugmentedRefit {
    pub fn new(dataset: &Dataset, config: &RidgeConfig, x: &[f64]) -> Result<Self> {
        check_dims(dataset, config)?;
        if x.len() != config.p {
            return Err(invalid("test point has the wrong dimension"));
        }
        let n1 = (dataset.len() + 1) as f64;
        let (mut g, c) = gram(dataset.samples(), config.p);
        let xv = DVector::from_column_slice(x);
        g += &xv * xv.transpose();
        for a in 0..config.p {
            g[(a, a)] += n1 * config.lambda;
        }
        let chol = g
            .cholesky()
            .expect("ridge normal matrix is positive definite for lambda > 0");
        let beta0 = chol.solve(&c);
        let slope = chol.solve(&xv);
        Ok(Self {
            beta0: beta0.iter().copied().collect(),
            slope: slope.iter().copied().collect(),
        })
    }

    pub fn model_at(&self, y: f64) -> RidgeModel {
        RidgeModel {
            beta: self.beta0.iter().zip(&self.slope).map(|(b, v)| b + y * v).collect(),
        }
    }

    /// `(β₀ᵀz, vᵀz)` so that the prediction at `z` is `a + y·g`.
    pub fn prediction_coefficients(&self, z: &[f64]) -> (f64, f64) {
        (dot(&self.beta0, z), dot(&self.slope, z))
    }
}

/// Uniform-stability constant `c_n` and bi-Lipschitz constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityProfile {
    /// `c_n = c_scale / n`.
    pub c_scale: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl StabilityProfile {
    pub fn c_n(&self, n: usize) -> f64 {
        self.c_scale / n as f64
    }
}

/// `c_n = 16 b² I² / (λ n)`, `κ₁ = b`, `κ₂ = √p · b`.
pub fn stability_profile(config: &RidgeConfig) -> StabilityProfile {
    let b2 = config.b * config.b;
    StabilityProfile {
        c_scale: 16.0 * b2 * config.i_bound * config.i_bound / config.lambda,
        kappa1: config.b,
        kappa2: (config.p as f64).sqrt() * config.b,
    }
}

/// Largest `|μ_D(x) − μ_{D∖i}(x)|` over `n_swaps` sampled removals `i`
/// and the given probes. Compare against `c_n / 2`.
pub fn audit_uniform_stability(
    dataset: &Dataset,
    config: &RidgeConfig,
    n_swaps: usize,
    probe_points: &[Vec<f64>],
    rng: &RngStream,
) -> Result<f64> {
    if n_swaps == 0 {
        return Err(invalid("n_swaps must be positive"));
    }
    for x in probe_points {
        if x.len() != config.p || l2_norm(x) > config.b * (1.0 + 1e-12) {
            return Err(invalid("probe points must lie in the feature ball"));
        }
    }
    let full = fit(dataset, config)?;
    let loo = LooFitter::new(dataset, config)?;
    let n = dataset.len();
    let indices: Vec<usize> = if n_swaps >= n {
        (0..n).collect()
    } else {
        let mut r = rng.rng();
        (0..n_swaps).map(|_| r.random_range(0..n)).collect()
    };
    let worst = indices
        .par_iter()
        .map(|&i| {
            let m = loo.model_without(i);
            probe_points
                .iter()
                .map(|x| (full.predict(x) - m.predict(x)).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// `min` and `max` over pairs of `max_x |μ_β(x) − μ_β′(x)| / ‖β − β′‖_∞`.
pub fn audit_bilipschitz(
    config: &RidgeConfig,
    model_pairs: &[(RidgeModel, RidgeModel)],
    probe_points: &[Vec<f64>],
) -> Result<(f64, f64)> {
    if model_pairs.is_empty() {
        return Err(invalid("need at least one model pair"));
    }
    if probe_points.is_empty() {
        return Err(invalid("need at least one probe point"));
    }
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (a, b) in model_pairs {
        if a.beta.len() != config.p || b.beta.len() != config.p {
            return Err(invalid("model dimension does not match config"));
        }
        let diff: Vec<f64> = a.beta.iter().zip(&b.beta).map(|(u, v)| u - v).collect();
        let sup_param = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if sup_param == 0.0 {
            return Err(invalid("model pairs must be distinct"));
        }
        let sup_fn = probe_points.iter().map(|x| dot(&diff, x).abs()).fold(0.0, f64::max);
        let ratio = sup_fn / sup_param;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok((lo, hi))
}

/// Probe set on the sphere of radius `b`: `±b e_j` plus `count` random
/// directions.
pub fn sphere_probes(p: usize, b: f64, count: usize, rng: &RngStream) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * p + count);
    for j in 0..p {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; p];
            e[j] = sign * b;
            out.push(e);
        }
    }
    let mut r = rng.rng();
    while out.len() < 2 * p + count {
        let v: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        let norm = l2_norm(&v);
        if norm > 1e-3 && norm <= 1.0 {
            out.push(v.iter().map(|c| c * b / norm).collect());
        }
    }
    out
}

/// Density-slope constants for the residual CDF under `P` and `Q`.
///
/// These are Monte Carlo stand-ins for assumption parameters, not
/// estimands with guarantees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBounds {
    pub l_n: f64,
    pub l_qn: f64,
    pub grid_step_p: f64,
    pub grid_step_q: f64,
    pub mean_model_fits: usize,
}

/// Number of histogram bins used for the finite-difference slope.
pub const DENSITY_BINS: usize = 40;

/// Largest finite-difference slope of the empirical CDF of `residuals`
/// over an equally spaced grid on `[min, max]`. Returns `(slope, step)`.
pub fn max_cdf_slope(residuals: &[f64], bins: usize) -> Result<(f64, f64)> {
    if residuals.is_empty() || bins == 0 {
        return Err(Error::DegenerateDensity);
    }
    let lo = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::DegenerateDensity);
    }
    let step = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &r in residuals {
        let k = (((r - lo) / step) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let max = *counts.iter().max().unwrap() as f64;
    Ok((max / (residuals.len() as f64 * step), step))
}

/// Minimum number of fits averaged into the mean model.
pub const MEAN_MODEL_FITS: usize = 200;

pub fn estimate_density_bounds<S: Scenario + ?Sized>(
    config: &RidgeConfig,
    scenario: &S,
    n: usize,
    n_mc: usize,
    rng: &RngStream,
) -> Result<DensityBounds> {
    if n == 0 || n_mc < 2 {
        return Err(invalid("need n >= 1 and n_mc >= 2"));
    }
    let fits: Vec<RidgeModel> = (0..MEAN_MODEL_FITS)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.derive(k as u64).rng();
            let samples = scenario.sample_p(&mut r, n);
            fit_samples(&samples, config)
        })
        .collect();
    let mut mean = vec![0.0; config.p];
    for f in &fits {
        for (m, b) in mean.iter_mut().zip(&f.beta) {
            *m += b / fits.len() as f64;
        }
    }
    let mean = RidgeModel { beta: mean };

    let mut r = rng.derive(u64::MAX).rng();
    let p_res: Vec<f64> = scenario
        .sample_p(&mut r, n_mc)
        .iter()
        .map(|s| (s.y - mean.predict(&s.x)).abs())
        .collect();
    let q_res: Vec<f64> = scenario
        .sample_q_x(&mut r, n_mc)
        .into_iter()
        .map(|x| {
            let y = scenario.sample_y_given_x(&mut r, &x);
            (y - mean.predict(&x)).abs()
        })
        .collect();
    let (l_n, grid_step_p) = max_cdf_slope(&p_res, DENSITY_BINS)?;
    let (l_qn, grid_step_q) = max_cdf_slope(&q_res, DENSITY_BINS)?;
    Ok(DensityBounds {
        l_n,
        l_qn,
        grid_step_p,
        grid_step_q,
        mean_model_fits: MEAN_MODEL_FITS,
    })
}
