//! Synthetic covariate-shift scenarios, Monte Carlo estimation of the
//! training-conditional miscoverage, replicated experiments, and reports.

mod harness;
mod report;
mod scenario;
mod study;

pub use harness::{
    beta_oracle_check, estimate_nu, estimate_pe, fit_method, run_experiment, run_experiment_with, ExperimentConfig,
    FittedPredictor, IntervalFn, TrialResult,
};
pub use report::{deciles, empirical_quantile, ExperimentReport, DECILE_LEVELS};
pub use scenario::{
    make_scenario_bounded, make_scenario_second_moment, second_moment_power, Scenario, ScenarioSpec, ShiftKind,
    ShiftScenario,
};
pub use study::{
    dkw_study, random_bounded_dataset, stability_audit_study, weighted_sup_deviation, DkwLemma, DkwStudy,
    DkwStudyConfig, DkwStudyRow, StabilityAuditRow,
};
