//! Importance-weighted empirical CDFs and the weighted DKW inequalities.

mod dkw;
mod ecdf;

pub use dkw::{
    classical_dkw_threshold, dkw_alternative, dkw_alternative_threshold, dkw_bounded_ratio, dkw_second_moment,
    dkw_second_moment_threshold, DkwBoundResult,
};
pub use ecdf::{
    build_hat_ecdf, build_test_weighted_ecdf, eval_cdf, quantile, sup_deviation, InfinitySide, WeightedEcdf,
    LEVEL_TOLERANCE,
};
