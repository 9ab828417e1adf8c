use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{l2_norm, Dataset, Sample};
use crate::error::{invalid, Result};
use crate::experiment::report::empirical_quantile;
use crate::experiment::scenario::{Scenario, ShiftKind, ShiftScenario};
use crate::ridge::{audit_uniform_stability, fit_loo_naive, sphere_probes, stability_profile, LooFitter, RidgeConfig};
use crate::rng::{RngStream, StreamRng};
use crate::weighted::{
    build_hat_ecdf, dkw_alternative_threshold, dkw_bounded_ratio, dkw_second_moment_threshold, sup_deviation,
};

/// Which weighted DKW inequality supplies the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DkwLemma {
    /// Bounded ratio, threshold `√(2B²ln(4/δ)/n) + 3C√(B/n)`.
    #[default]
    A1,
    /// Second moment, inverted polynomial tail.
    A2,
    /// Bounded ratio, exponential tail without the constant `C`.
    A3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkwStudyRow {
    pub n: usize,
    pub median_deviation: f64,
    pub threshold: f64,
    /// Fraction of replications whose deviation exceeded `threshold`.
    pub exceedance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkwStudy {
    pub lemma: DkwLemma,
    pub delta: f64,
    pub c: f64,
    pub replications: usize,
    pub rows: Vec<DkwStudyRow>,
    /// `median(n_k) / median(n_{k+1})` for consecutive sizes.
    pub median_ratios: Vec<f64>,
}

/// Sup-distance between the self-normalized weighted ECDF of `n` training
/// scores and the exact test-score CDF, for the fixed score `|y − θᵀx|`.
pub fn weighted_sup_deviation(scenario: &ShiftScenario, n: usize, rng: &mut StreamRng) -> Result<f64> {
    let samples = scenario.sample_p(rng, n);
    let scores: Vec<f64> = samples
        .iter()
        .map(|s| (s.y - scenario.regression(&s.x)).abs())
        .collect();
    let ratios = scenario.ratio().eval_many(samples.iter().map(|s| s.x.as_slice()))?;
    let ecdf = build_hat_ecdf(&scores, &ratios)?;
    Ok(sup_deviation(&ecdf, |t| scenario.true_score_cdf_q(t)))
}

/// Settings of a [`dkw_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkwStudyConfig {
    pub ns: Vec<usize>,
    pub replications: usize,
    pub delta: f64,
    pub c: f64,
    pub lemma: DkwLemma,
    /// Ratio bound used in the threshold; the scenario's exact value when
    /// absent.
    pub declared_bound: Option<f64>,
    pub master_seed: u64,
}

fn lemma_threshold(scenario: &ShiftScenario, config: &DkwStudyConfig, n: usize) -> Result<f64> {
    let (delta, c) = (config.delta, config.c);
    let bounded = matches!(scenario.spec().shift, ShiftKind::Bounded { .. });
    let r = match config.lemma {
        DkwLemma::A1 | DkwLemma::A3 if !bounded && config.declared_bound.is_none() => {
            return Err(invalid("lemmas a1 and a3 need a bounded likelihood ratio"));
        }
        DkwLemma::A1 => dkw_bounded_ratio(n, config.declared_bound.unwrap_or(scenario.ratio_bound()), delta, c)?,
        DkwLemma::A3 => dkw_alternative_threshold(n, config.declared_bound.unwrap_or(scenario.ratio_bound()), delta)?,
        DkwLemma::A2 => dkw_second_moment_threshold(
            n,
            config.declared_bound.unwrap_or(scenario.second_moment_norm()),
            delta,
            c,
        )?,
    };
    Ok(r.deviation_threshold)
}

/// Replicated sup-deviation measurements at each size in `config.ns`.
/// Replication `j` at size index `k` uses stream `(master_seed, j)`
/// derived by `k`, so results do not depend on `threads`.
pub fn dkw_study(scenario: &ShiftScenario, config: &DkwStudyConfig, threads: usize) -> Result<DkwStudy> {
    let ns = &config.ns;
    let replications = config.replications;
    if ns.is_empty() || ns.contains(&0) {
        return Err(invalid("sample sizes must be a nonempty list of positive integers"));
    }
    if replications == 0 {
        return Err(invalid("replications must be at least 1"));
    }
    if !(config.delta > 0.0 && config.delta < 1.0) {
        return Err(invalid(format!("delta must be in (0, 1), got {}", config.delta)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    let mut rows = Vec::with_capacity(ns.len());
    for (k, &n) in ns.iter().enumerate() {
        let threshold = lemma_threshold(scenario, config, n)?;
        let devs = pool.install(|| {
            (0..replications)
                .into_par_iter()
                .map(|j| {
                    let mut r = RngStream::new(config.master_seed, j as u64).derive(k as u64).rng();
                    weighted_sup_deviation(scenario, n, &mut r)
                })
                .collect::<Result<Vec<f64>>>()
        })?;
        rows.push(DkwStudyRow {
            n,
            median_deviation: empirical_quantile(&devs, 0.5),
            threshold,
            exceedance: devs.iter().filter(|&&d| d > threshold).count() as f64 / replications as f64,
        });
    }
    let median_ratios = rows
        .windows(2)
        .map(|w| w[0].median_deviation / w[1].median_deviation)
        .collect();
    Ok(DkwStudy {
        lemma: config.lemma,
        delta: config.delta,
        c: config.c,
        replications,
        rows,
        median_ratios,
    })
}

/// `n` points uniform in direction with radius up to `b`, responses
/// uniform on `[−I, I]`.
pub fn random_bounded_dataset(n: usize, p: usize, b: f64, i_bound: f64, rng: &RngStream) -> Result<Dataset> {
    let mut r = rng.rng();
    let samples = (0..n)
        .map(|_| {
            let dir: Vec<f64> = loop {
                let v: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
                let norm = l2_norm(&v);
                if norm > 1e-6 && norm <= 1.0 {
                    break v.iter().map(|c| c / norm).collect();
                }
            };
            let radius = b * r.random::<f64>().powf(1.0 / p as f64);
            let x = dir.iter().map(|c| c * radius).collect();
            Sample::new(x, r.random_range(-i_bound..=i_bound))
        })
        .collect();
    Dataset::new(samples, p, b, i_bound)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityAuditRow {
    pub n: usize,
    pub lambda: f64,
    pub datasets: usize,
    /// `c_n / 2`.
    pub bound: f64,
    pub max_audited: f64,
    pub violations: usize,
    /// Largest sup-norm gap between fast and naive leave-one-out fits.
    pub max_loo_gap: f64,
}

/// Audits removal stability of ridge on `datasets` random bounded datasets
/// per `(n, λ)` cell.
pub fn stability_audit_study(
    ns: &[usize],
    lambdas: &[f64],
    datasets: usize,
    p: usize,
    b: f64,
    i_bound: f64,
    master_seed: u64,
) -> Result<Vec<StabilityAuditRow>> {
    let mut rows = Vec::new();
    for (a, &n) in ns.iter().enumerate() {
        for (l, &lambda) in lambdas.iter().enumerate() {
            let config = RidgeConfig::new(lambda, p, b, i_bound)?;
            let bound = stability_profile(&config).c_n(n) / 2.0;
            let cell = (a * lambdas.len() + l) as u64;
            let results = (0..datasets)
                .into_par_iter()
                .map(|k| -> Result<(f64, f64)> {
                    let stream = RngStream::new(master_seed, k as u64).derive(cell);
                    let data = random_bounded_dataset(n, p, b, i_bound, &stream.derive(0))?;
                    let probes = sphere_probes(p, b, 32, &stream.derive(1));
                    let audited = audit_uniform_stability(&data, &config, n, &probes, &stream.derive(2))?;
                    let loo = LooFitter::new(&data, &config)?;
                    let mut gap: f64 = 0.0;
                    for i in 0..n {
                        let fast = loo.model_without(i);
                        let naive = fit_loo_naive(&data, &config, i)?;
                        for (u, v) in fast.beta.iter().zip(&naive.beta) {
                            gap = gap.max((u - v).abs());
                        }
                    }
                    Ok((audited, gap))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(StabilityAuditRow {
                n,
                lambda,
                datasets,
                bound,
                max_audited: results.iter().map(|r| r.0).fold(0.0, f64::max),
                violations: results.iter().filter(|r| r.0 > bound).count(),
                max_loo_gap: results.iter().map(|r| r.1).fold(0.0, f64::max),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::scenario::{make_scenario_bounded, make_scenario_second_moment};

    fn study(ns: &[usize], replications: usize, lemma: DkwLemma) -> DkwStudyConfig {
        DkwStudyConfig {
            ns: ns.to_vec(),
            replications,
            delta: 0.1,
            c: 1.0,
            lemma,
            declared_bound: None,
            master_seed: 3,
        }
    }

    #[test]
    fn study_shape_and_determinism() {
        let s = make_scenario_bounded(0.5, 2, 1.0, 0.5).unwrap();
        let cfg = study(&[50, 200], 40, DkwLemma::A1);
        let a = dkw_study(&s, &cfg, 1).unwrap();
        let b = dkw_study(&s, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.median_ratios.len(), 1);
        assert!(a.rows[0].median_deviation > a.rows[1].median_deviation);
        assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.exceedance)));
    }

    #[test]
    fn lemma_domains() {
        let heavy = make_scenario_second_moment(1.2, 2, 1.0, 0.5).unwrap();
        assert!(dkw_study(&heavy, &study(&[50], 5, DkwLemma::A1), 1).is_err());
        let r = dkw_study(&heavy, &study(&[50], 5, DkwLemma::A2), 1).unwrap();
        assert!(r.rows[0].threshold > 0.0);
        let s = make_scenario_bounded(0.5, 2, 1.0, 0.5).unwrap();
        let a3 = dkw_study(&s, &study(&[100], 5, DkwLemma::A3), 1).unwrap();
        let a1 = dkw_study(&s, &study(&[100], 5, DkwLemma::A1), 1).unwrap();
        assert_ne!(a3.rows[0].threshold, a1.rows[0].threshold);
        assert!(dkw_study(&s, &study(&[], 5, DkwLemma::A1), 1).is_err());
        let below_one = DkwStudyConfig {
            declared_bound: Some(0.5),
            ..study(&[100], 5, DkwLemma::A1)
        };
        assert!(matches!(
            dkw_study(&s, &below_one, 1),
            Err(crate::Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn random_datasets_are_bounded() {
        let d = random_bounded_dataset(200, 3, 1.0, 1.0, &RngStream::new(1, 0)).unwrap();
        assert!(d.samples().iter().all(|s| l2_norm(&s.x) <= 1.0 && s.y.abs() <= 1.0));
    }

    #[test]
    fn small_audit_study() {
        let rows = stability_audit_study(&[10], &[0.5], 4, 2, 1.0, 1.0, 9).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].violations, 0);
        assert!(rows[0].max_audited > 0.0 && rows[0].max_loo_gap < 1e-8);
    }
}
