use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("row {row}: {what} violates declared bound ({value} > {bound})")]
    BoundViolation {
        row: usize,
        what: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("likelihood ratio {value} exceeds declared bound {bound}")]
    RatioExceedsBound { value: f64, bound: f64 },

    #[error("self-normalization undefined: all likelihood ratios are zero")]
    ZeroTotalWeight,

    #[error("density unbounded or degenerate")]
    DegenerateDensity,

    #[error("trial {trial} (seed {seed}, stream {stream}) failed: {source}")]
    Trial {
        trial: usize,
        seed: u64,
        stream: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
