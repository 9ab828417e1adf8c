//! Labeled samples, bounded datasets, CSV ingestion and train/calibration splits.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// Ordered samples whose features lie in the ball `‖x‖₂ ≤ b` and whose
/// responses lie in `[−I, I]`. Both bounds are checked on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    p: usize,
    b: f64,
    i_bound: f64,
}

/// Slack allowed when checking the declared domain bounds.
const BOUND_SLACK: f64 = 1e-12;

impl Dataset {
    pub fn new(samples: Vec<Sample>, p: usize, b: f64, i_bound: f64) -> Result<Self> {
        if p == 0 {
            return Err(invalid("feature dimension p must be positive"));
        }
        if !(b > 0.0 && b.is_finite()) || !(i_bound > 0.0 && i_bound.is_finite()) {
            return Err(invalid("bounds b and I must be positive and finite"));
        }
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (idx, s) in samples.iter().enumerate() {
            check_sample(s, idx + 1, p, b, i_bound)?;
        }
        Ok(Self { samples, p, b, i_bound })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn i_bound(&self) -> f64 {
        self.i_bound
    }

    /// Sub-dataset with the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| invalid(format!("index {i} out of range for n = {}", self.len())))?;
            samples.push(s.clone());
        }
        Ok(Dataset {
            samples,
            p: self.p,
            b: self.b,
            i_bound: self.i_bound,
        })
    }

    /// Dataset with row `i` removed.
    pub fn without(&self, i: usize) -> Result<Dataset> {
        let keep: Vec<usize> = (0..self.len()).filter(|&j| j != i).collect();
        self.subset(&keep)
    }

    /// Dataset with one extra sample appended (checked against the bounds).
    pub fn with_sample(&self, sample: Sample) -> Result<Dataset> {
        check_sample(&sample, self.len() + 1, self.p, self.b, self.i_bound)?;
        let mut samples = self.samples.clone();
        samples.push(sample);
        Ok(Dataset {
            samples,
            p: self.p,
            b: self.b,
            i_bound: self.i_bound,
        })
    }
}

fn check_sample(s: &Sample, row: usize, p: usize, b: f64, i_bound: f64) -> Result<()> {
    if s.x.len() != p {
        return Err(Error::MalformedRow {
            row,
            reason: format!("expected {p} features, found {}", s.x.len()),
        });
    }
    if !s.y.is_finite() || s.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::MalformedRow {
            row,
            reason: "non-finite value".into(),
        });
    }
    let norm = l2_norm(&s.x);
    if norm > b + BOUND_SLACK {
        return Err(Error::BoundViolation {
            row,
            what: "feature norm",
            value: norm,
            bound: b,
        });
    }
    if s.y.abs() > i_bound + BOUND_SLACK {
        return Err(Error::BoundViolation {
            row,
            what: "response magnitude",
            value: s.y.abs(),
            bound: i_bound,
        });
    }
    Ok(())
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Reads `x1,…,xp,y` rows (one header row) into a bounded dataset.
///
/// Rows are numbered from 1 for the first data row.
pub fn load_csv(path: impl AsRef<Path>, p: usize, b: f64, i_bound: f64) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let samples = read_samples(file, p)?;
    Dataset::new(samples, p, b, i_bound)
}

/// Parses CSV rows without any bound checks; `p` is the expected number of
/// feature columns.
pub fn read_samples<R: std::io::Read>(reader: R, p: usize) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header_len = rdr.headers()?.len();
    if header_len != p + 1 {
        return Err(Error::MalformedRow {
            row: 0,
            reason: format!("header has {header_len} columns, expected {}", p + 1),
        });
    }
    let mut samples = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        if record.len() != p + 1 {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {} fields, found {}", p + 1, record.len()),
            });
        }
        let mut values = Vec::with_capacity(p + 1);
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("non-numeric field {field:?}"),
            })?;
            values.push(v);
        }
        let y = values.pop().expect("p + 1 >= 1 fields");
        samples.push(Sample::new(values, y));
    }
    Ok(samples)
}

/// Number of feature columns implied by a CSV header.
pub fn csv_feature_count(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let n = rdr.headers()?.len();
    if n < 2 {
        return Err(Error::MalformedRow {
            row: 0,
            reason: "header needs at least one feature column and a response column".into(),
        });
    }
    Ok(n - 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_indices: Vec<usize>,
    pub cal_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Seeded random permutation.
    #[default]
    Random,
    /// First `n_train` rows train, the rest calibrate.
    Ordered,
}

pub fn split(dataset: &Dataset, n_train: usize, rng: &RngStream) -> Result<SplitSpec> {
    split_with_mode(dataset, n_train, rng, SplitMode::Random)
}

pub fn split_with_mode(dataset: &Dataset, n_train: usize, rng: &RngStream, mode: SplitMode) -> Result<SplitSpec> {
    let n = dataset.len();
    if n_train == 0 || n_train >= n {
        return Err(invalid(format!(
            "n_train must satisfy 1 <= n_train < n (n_train = {n_train}, n = {n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if mode == SplitMode::Random {
        order.shuffle(&mut rng.rng());
    }
    let cal_indices = order.split_off(n_train);
    Ok(SplitSpec {
        train_indices: order,
        cal_indices,
    })
}

/// Absolute residual score `|y − prediction|`.
pub fn abs_residual_score(y: f64, prediction: f64) -> f64 {
    (y - prediction).abs()
}
