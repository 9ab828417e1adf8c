use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundResult;
use crate::error::{invalid, Error, Result};
use crate::experiment::harness::TrialResult;

/// Everything a replicated experiment produced. Field order is the JSON
/// key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: serde_json::Value,
    pub trials: Vec<TrialResult>,
    pub pe_deciles: IndexMap<String, f64>,
    /// Bound name → fraction of trials whose miscoverage exceeded it.
    pub exceedance: IndexMap<String, f64>,
    pub bounds: Vec<BoundResult>,
    pub wall_time_s: f64,
}

/// Levels reported in `pe_deciles`.
pub const DECILE_LEVELS: [(&str, f64); 5] = [("q10", 0.1), ("q25", 0.25), ("q50", 0.5), ("q75", 0.75), ("q90", 0.9)];

/// Linearly interpolated empirical quantile (type 7) of unsorted data.
pub fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    sorted_quantile(&v, level)
}

fn sorted_quantile(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = level.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn deciles(values: &[f64]) -> IndexMap<String, f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    DECILE_LEVELS
        .iter()
        .map(|(k, level)| (k.to_string(), sorted_quantile(&v, *level)))
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl ExperimentReport {
    pub fn mean_pe(&self) -> f64 {
        self.trials.iter().map(|t| t.pe).sum::<f64>() / self.trials.len() as f64
    }

    /// Standard error of the mean miscoverage across trials (between-trial
    /// spread, which already includes the per-trial Monte Carlo noise).
    pub fn mean_pe_stderr(&self) -> f64 {
        let n = self.trials.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let mean = self.mean_pe();
        let var = self.trials.iter().map(|t| (t.pe - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    pub fn pe_values(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.pe).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with `wall_time_s` zeroed, for reproducibility comparisons.
    pub fn to_canonical_json(&self) -> Result<String> {
        let mut c = self.clone();
        c.wall_time_s = 0.0;
        c.to_json()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(io_err(path))
    }

    /// One row per trial: `trial_id,seed,pe,pe_stderr,median_width`.
    pub fn write_trials_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial_id", "seed", "pe", "pe_stderr", "median_width"])?;
        for t in &self.trials {
            w.write_record([
                t.trial_id.to_string(),
                t.seed.to_string(),
                t.pe.to_string(),
                t.pe_stderr.to_string(),
                format_ext(t.median_width),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// `bin_left,bin_right,count` over the observed miscoverage range.
    pub fn write_histogram_csv<W: Write>(&self, out: W, bins: usize) -> Result<()> {
        if bins == 0 {
            return Err(invalid("histogram needs at least one bin"));
        }
        let pes = self.pe_values();
        let lo = pes.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo {
            (hi - lo) / bins as f64
        } else {
            1.0 / bins as f64
        };
        let mut counts = vec![0usize; bins];
        for pe in &pes {
            let k = (((pe - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_left", "bin_right", "count"])?;
        for (k, c) in counts.iter().enumerate() {
            let left = lo + k as f64 * width;
            w.write_record([left.to_string(), (left + width).to_string(), c.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn format_ext(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}
