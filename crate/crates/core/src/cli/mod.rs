//! Command-line front end. Every subcommand reads its options from flags,
//! optionally layered over a TOML file (`--config`); flags win.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid arguments.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;

const OUT_DIR_ENV: &str = "COVSHIFT_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "covshift-out";

#[derive(Debug, Parser)]
#[command(
    name = "covshift",
    version,
    about = "Weighted conformal prediction under covariate shift"
)]
struct Cli {
    /// TOML file with defaults: top-level `seed`, `threads`, `out_dir` and
    /// one table per subcommand (`[predict]`, `[bounds]`, `[simulate]`,
    /// `[dkw]`, `[stability_audit]`).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; falls back to $COVSHIFT_OUT_DIR.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Prediction intervals for new points from a CSV training set.
    Predict(PredictArgs),
    /// Evaluate miscoverage bounds.
    Bounds(BoundsArgs),
    /// Replicated Monte Carlo experiments on a synthetic shift.
    Simulate(SimulateArgs),
    /// Replicated weighted-DKW deviation study.
    Dkw(DkwArgs),
    /// Audit ridge removal stability on random bounded data.
    StabilityAudit(AuditArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct PredictArgs {
    /// CSV with feature columns followed by the response.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Test point as comma-separated features; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub x: Vec<String>,
    /// split | full | jackknife | jackknife_plus | jackknife_plus_inflated |
    /// cv_plus | jaw, optionally with a `_weighted` suffix.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Feature norm bound (default: largest norm in the data).
    #[arg(long)]
    pub b: Option<f64>,
    /// Response bound (default: largest |y| in the data).
    #[arg(long)]
    pub i_bound: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Proper-training size for split conformal (default: n / 2).
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Weight by the tilt ratio `(1+γu)/(1−γu)`, `u = x₁√p/b`.
    #[arg(long)]
    pub ratio_tilt: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Write results as CSV (intervals, or grid membership for full).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct BoundsArgs {
    /// split | split-second-moment | jackknife | jackknife-shift | cv-plus |
    /// full | full-shift | bian | liang
    #[arg(long, visible_alias = "theorem")]
    pub bound: Option<String>,
    /// Every bound whose preconditions hold.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Total failure budget, split evenly between ε and δ.
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Sup bound B on the likelihood ratio.
    #[arg(long)]
    pub b_ratio: Option<f64>,
    /// Second-moment bound K on the likelihood ratio.
    #[arg(long)]
    pub k2: Option<f64>,
    /// Weighted DKW constant.
    #[arg(long)]
    pub c: Option<f64>,
    /// Stability `c_n = c_scale / n`; overrides the ridge profile.
    #[arg(long)]
    pub c_scale: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Feature norm bound for the ridge profile.
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub i_bound: Option<f64>,
    #[arg(long)]
    pub kappa1: Option<f64>,
    #[arg(long)]
    pub kappa2: Option<f64>,
    #[arg(long)]
    pub l: Option<f64>,
    #[arg(long)]
    pub l_q: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub psi_constant: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct SimulateArgs {
    /// Comma-separated method labels, e.g. `split,split_weighted,jaw`.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Training size (proper-training part for split).
    #[arg(long)]
    pub n: Option<usize>,
    /// Calibration size for split.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Tilt strength of the bounded-ratio shift.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Target second-moment norm of the heavy-tailed shift.
    #[arg(long)]
    pub k_target: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Failure probability of the attached bounds.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Weighted DKW constant of the attached bounds.
    #[arg(long)]
    pub c: Option<f64>,
    /// Also write a miscoverage histogram with this many bins.
    #[arg(long)]
    pub histogram_bins: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct DkwArgs {
    /// Comma-separated sample sizes.
    #[arg(long)]
    pub ns: Option<String>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k_target: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    /// a1 (bounded ratio), a2 (second moment) or a3 (alternative).
    #[arg(long)]
    pub lemma: Option<String>,
    /// Ratio bound used in the threshold (default: the scenario's own).
    #[arg(long)]
    pub b_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct AuditArgs {
    #[arg(long)]
    pub ns: Option<String>,
    #[arg(long)]
    pub lambdas: Option<String>,
    #[arg(long)]
    pub datasets: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub i_bound: Option<f64>,
}

/// Settings shared by all subcommands after merging flags, file and env.
#[derive(Debug, Clone, Serialize)]
pub(crate) struct Globals {
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,
    pub json: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    threads: Option<usize>,
    out_dir: Option<PathBuf>,
    predict: Option<Value>,
    bounds: Option<Value>,
    simulate: Option<Value>,
    dkw: Option<Value>,
    stability_audit: Option<Value>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub(crate) struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

pub(crate) type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => read_config(path)?,
        None => ConfigFile::default(),
    };
    let out_dir = cli
        .out_dir
        .clone()
        .or(file.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let globals = Globals {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        threads: cli.threads.or(file.threads).unwrap_or(0),
        out_dir,
        json: cli.json,
    };
    match cli.command {
        Command::Predict(a) => commands::predict(&globals, overlay(file.predict, &a, "predict")?),
        Command::Bounds(a) => commands::bounds(&globals, overlay(file.bounds, &a, "bounds")?),
        Command::Simulate(a) => commands::simulate(&globals, overlay(file.simulate, &a, "simulate")?),
        Command::Dkw(a) => commands::dkw(&globals, overlay(file.dkw, &a, "dkw")?),
        Command::StabilityAudit(a) => {
            commands::stability_audit(&globals, overlay(file.stability_audit, &a, "stability_audit")?)
        }
    }
}

fn read_config(path: &Path) -> CliResult<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Lays the explicitly given flags over the file's table. Unset flags
/// (`None`, `false`, empty lists) leave the file value in place.
fn overlay<A: Serialize + DeserializeOwned>(file: Option<Value>, flags: &A, table: &str) -> CliResult<A> {
    let mut merged = match file {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(CliError::usage(format!("config: [{table}] must be a table"))),
        None => serde_json::Map::new(),
    };
    let flags = serde_json::to_value(flags).map_err(|e| CliError::runtime(e.to_string()))?;
    if let Value::Object(m) = flags {
        for (k, v) in m {
            let unset = match &v {
                Value::Null | Value::Bool(false) => true,
                Value::Array(a) => a.is_empty(),
                _ => false,
            };
            if !unset {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::usage(format!("config: [{table}]: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: Value = serde_json::json!({"alpha": 0.2, "n": 50});
        let flags = BoundsArgs {
            alpha: Some(0.1),
            ..Default::default()
        };
        let merged = overlay(Some(file), &flags, "bounds").unwrap();
        assert_eq!(merged.alpha, Some(0.1));
        assert_eq!(merged.n, Some(50));
    }

    #[test]
    fn unknown_file_keys_are_usage_errors() {
        let file: Value = serde_json::json!({"alhpa": 0.2});
        let e = overlay(Some(file), &BoundsArgs::default(), "bounds").unwrap_err();
        assert_eq!(e.code, 2);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::InvalidArgument("x".into())).code, 2);
        assert_eq!(CliError::from(Error::ZeroTotalWeight).code, 1);
    }
}
