use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{AuditArgs, BoundsArgs, CliError, CliResult, DkwArgs, Globals, PredictArgs, SimulateArgs};
use crate::bounds::{
    all_bounds, bian_cv_bound, classical_split_bound, cv_plus_bound, full_bound_exch, full_bound_shift,
    jackknife_bound_exch, jackknife_bound_shift, liang_balanced_bound, liang_comparison_bound, split_bound,
    split_bound_second_moment, BoundInputs, BoundResult, StabilityCurve,
};
use crate::conformal::{
    assign_folds, default_grid, full_conformal, jackknife_threshold, JackknifePlusPredictor, Method, MethodConfig,
    PredictionInterval, SplitConformalPredictor, DEFAULT_GRID_POINTS,
};
use crate::data::{csv_feature_count, l2_norm, read_samples, split, Dataset};
use crate::error::Error;
use crate::experiment::{
    dkw_study, make_scenario_bounded, run_experiment, stability_audit_study, DkwLemma, DkwStudyConfig,
    ExperimentConfig, Scenario, ScenarioSpec, ShiftKind,
};
use crate::ratio::LikelihoodRatio;
use crate::ridge::{stability_profile, RidgeConfig};
use crate::rng::RngStream;

fn need<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn parse_list<T: std::str::FromStr>(text: &str, flag: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| CliError::usage(format!("--{flag}: cannot parse {s:?}")))
        })
        .collect()
}

fn print_json(value: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

/// Parses a method label such as `cv_plus` or `split_weighted`.
pub(crate) fn parse_method(label: &str, alpha: f64, folds: usize, epsilon: f64) -> CliResult<MethodConfig> {
    let label = label.trim().replace('-', "_");
    let (base, weighted) = match label.strip_suffix("_weighted") {
        Some(b) => (b, true),
        None => (label.as_str(), false),
    };
    let method = match base {
        "split" => Method::Split,
        "full" => Method::Full,
        "jackknife" => Method::Jackknife,
        "jackknife_plus" => Method::JackknifePlus,
        "jackknife_plus_inflated" => Method::JackknifePlusInflated { epsilon },
        "cv_plus" => Method::CvPlus { folds },
        "jaw" => Method::Jaw,
        other => return Err(CliError::usage(format!("unknown method {other:?}"))),
    };
    if method == Method::Jackknife && weighted {
        return Err(CliError::usage("the plain jackknife has no weighted form; use jaw"));
    }
    Ok(MethodConfig::new(alpha, method, weighted)?)
}

fn format_interval(iv: &PredictionInterval) -> String {
    match iv.bounds() {
        Some((lo, hi)) => format!("[{lo}, {hi}]"),
        None => "empty".to_string(),
    }
}

fn interval_json(iv: &PredictionInterval) -> Value {
    match iv.bounds() {
        Some((lo, hi)) => json!({ "lower": ext(lo), "upper": ext(hi) }),
        None => json!("empty"),
    }
}

/// JSON has no infinities; they are written as strings.
fn ext(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub(crate) fn predict(globals: &Globals, args: PredictArgs) -> CliResult<()> {
    let path = need(args.data.clone(), "data")?;
    let alpha = need(args.alpha, "alpha")?;
    if args.x.is_empty() {
        return Err(CliError::usage("missing required option --x"));
    }
    let p = csv_feature_count(&path)?;
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    let samples = read_samples(file, p)?;
    let b = args
        .b
        .unwrap_or_else(|| samples.iter().map(|s| l2_norm(&s.x)).fold(f64::MIN_POSITIVE, f64::max));
    let i_bound = args
        .i_bound
        .unwrap_or_else(|| samples.iter().map(|s| s.y.abs()).fold(f64::MIN_POSITIVE, f64::max));
    let data = Dataset::new(samples, p, b, i_bound)?;
    let xs = args
        .x
        .iter()
        .map(|s| {
            let v: Vec<f64> = parse_list(s, "x")?;
            if v.len() != p {
                return Err(CliError::usage(format!(
                    "--x {s:?} has {} features, the data has {p}",
                    v.len()
                )));
            }
            Ok(v)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let method = parse_method(
        args.method.as_deref().unwrap_or("split"),
        alpha,
        args.folds.unwrap_or(5),
        args.epsilon.unwrap_or(0.0),
    )?;
    let ridge = RidgeConfig::new(args.lambda.unwrap_or(1.0), p, b, i_bound)?;
    let ratio = match args.ratio_tilt {
        Some(g) => make_scenario_bounded(g, p, b, 1.0)?.ratio().clone(),
        None => LikelihoodRatio::unweighted(),
    };
    let ratio = if method.weighted || method.method == Method::Jaw {
        ratio
    } else {
        LikelihoodRatio::unweighted()
    };
    let config = serde_json::to_value(&args).map_err(|e| CliError::runtime(e.to_string()))?;

    if method.method == Method::Full {
        let grid = default_grid(i_bound, args.grid_points.unwrap_or(DEFAULT_GRID_POINTS));
        let sets = xs
            .iter()
            .map(|x| full_conformal(&data, x, &ridge, alpha, &ratio, &grid))
            .collect::<Result<Vec<_>, Error>>()?;
        if let Some(out) = &args.output {
            let mut w = create(out)?;
            writeln!(w, "point,y,member").map_err(|e| io_err(out, e))?;
            for (k, set) in sets.iter().enumerate() {
                for (y, m) in set.grid.iter().zip(&set.membership) {
                    writeln!(w, "{k},{y},{}", u8::from(*m)).map_err(|e| io_err(out, e))?;
                }
            }
            w.flush().map_err(|e| io_err(out, e))?;
        }
        if globals.json {
            let preds: Vec<Value> = xs
                .iter()
                .zip(&sets)
                .map(|(x, s)| {
                    let members: Vec<f64> = s
                        .grid
                        .iter()
                        .zip(&s.membership)
                        .filter(|m| *m.1)
                        .map(|m| *m.0)
                        .collect();
                    json!({ "x": x, "members": members, "approximate_width": s.approximate_width() })
                })
                .collect();
            return print_json(&json!({ "config": config, "method": method.label(), "predictions": preds }));
        }
        for (x, s) in xs.iter().zip(&sets) {
            let members: Vec<f64> = s
                .grid
                .iter()
                .zip(&s.membership)
                .filter(|m| *m.1)
                .map(|m| *m.0)
                .collect();
            let hull = match (members.first(), members.last()) {
                (Some(lo), Some(hi)) => format!("[{lo}, {hi}]"),
                _ => "empty".to_string(),
            };
            println!("{}\t{hull}\t{}/{} grid points", join(x), s.member_count(), s.grid.len());
        }
        return Ok(());
    }

    let intervals: Vec<PredictionInterval> = match method.method {
        Method::Split => {
            let n_train = args.n_train.unwrap_or(data.len() / 2);
            let spec = split(&data, n_train, &RngStream::new(globals.seed, 0))?;
            let train = data.subset(&spec.train_indices)?;
            let cal = data.subset(&spec.cal_indices)?;
            let pred = SplitConformalPredictor::new(&train, &cal, &ridge, alpha, &ratio)?;
            xs.iter().map(|x| pred.interval(x)).collect::<Result<_, Error>>()?
        }
        Method::Jackknife => {
            let (model, q) = jackknife_threshold(&data, &ridge, alpha)?;
            xs.iter()
                .map(|x| {
                    let c = model.predict(x);
                    if q.is_finite() {
                        PredictionInterval::new(c - q, c + q)
                    } else {
                        PredictionInterval::whole_line()
                    }
                })
                .collect()
        }
        Method::CvPlus { folds } => {
            let folds = assign_folds(data.len(), folds, &RngStream::new(globals.seed, 1))?;
            let pred = JackknifePlusPredictor::with_folds(&data, &ridge, alpha, &folds, &ratio)?;
            xs.iter().map(|x| pred.interval(x)).collect::<Result<_, Error>>()?
        }
        Method::JackknifePlusInflated { epsilon } => {
            let pred = JackknifePlusPredictor::new(&data, &ridge, alpha, &ratio)?.inflated(epsilon)?;
            xs.iter().map(|x| pred.interval(x)).collect::<Result<_, Error>>()?
        }
        Method::JackknifePlus | Method::Jaw | Method::Full => {
            let pred = JackknifePlusPredictor::new(&data, &ridge, alpha, &ratio)?;
            xs.iter().map(|x| pred.interval(x)).collect::<Result<_, Error>>()?
        }
    };
    if let Some(out) = &args.output {
        let mut w = create(out)?;
        let header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
        writeln!(w, "{},lower,upper", header.join(",")).map_err(|e| io_err(out, e))?;
        for (x, iv) in xs.iter().zip(&intervals) {
            let (lo, hi) = iv.bounds().unwrap_or((f64::NAN, f64::NAN));
            writeln!(w, "{},{lo},{hi}", join(x)).map_err(|e| io_err(out, e))?;
        }
        w.flush().map_err(|e| io_err(out, e))?;
    }
    if globals.json {
        let preds: Vec<Value> = xs
            .iter()
            .zip(&intervals)
            .map(|(x, iv)| json!({ "x": x, "interval": interval_json(iv) }))
            .collect();
        return print_json(&json!({ "config": config, "method": method.label(), "predictions": preds }));
    }
    for (x, iv) in xs.iter().zip(&intervals) {
        println!("{}\t{}", join(x), format_interval(iv));
    }
    Ok(())
}

fn join(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn bound_inputs(args: &BoundsArgs) -> CliResult<BoundInputs> {
    let d = BoundInputs::default();
    let mut inputs = BoundInputs {
        alpha: args.alpha.unwrap_or(d.alpha),
        delta: args.delta.unwrap_or(d.delta),
        epsilon: args.epsilon.unwrap_or(d.epsilon),
        n: args.n.unwrap_or(d.n),
        m: args.m.unwrap_or(d.m),
        p: args.p.unwrap_or(d.p),
        b_ratio: args.b_ratio.unwrap_or(d.b_ratio),
        k2: args.k2.unwrap_or(d.k2),
        c: args.c.unwrap_or(d.c),
        l: args.l.unwrap_or(d.l),
        l_q: args.l_q.unwrap_or(d.l_q),
        gamma: args.gamma.unwrap_or(d.gamma),
        psi_constant: args.psi_constant.unwrap_or(d.psi_constant),
        ..d
    };
    if let Some(budget) = args.budget {
        inputs = inputs.with_failure_budget(budget);
    }
    let ridge = RidgeConfig::new(
        args.lambda.unwrap_or(1.0),
        inputs.p,
        args.b.unwrap_or(1.0),
        args.i_bound.unwrap_or(1.0),
    )?;
    inputs = inputs.with_ridge_profile(&stability_profile(&ridge));
    if let Some(scale) = args.c_scale {
        inputs.stability = StabilityCurve::InverseN { scale };
    }
    if let Some(k) = args.kappa1 {
        inputs.kappa1 = k;
    }
    if let Some(k) = args.kappa2 {
        inputs.kappa2 = k;
    }
    inputs.validate()?;
    Ok(inputs)
}

pub(crate) fn bounds(globals: &Globals, args: BoundsArgs) -> CliResult<()> {
    let inputs = bound_inputs(&args)?;
    let folds = args.folds.unwrap_or(5);
    let results: Vec<BoundResult> = if args.all {
        all_bounds(&inputs, folds)?.into_values().collect()
    } else {
        let name = args
            .bound
            .as_deref()
            .ok_or_else(|| CliError::usage("one of --bound NAME or --all is required"))?;
        match name.replace('_', "-").as_str() {
            "split" => vec![split_bound(&inputs)?],
            "split-second-moment" => vec![split_bound_second_moment(&inputs)?],
            "jackknife" => vec![jackknife_bound_exch(&inputs)?],
            "jackknife-shift" => vec![jackknife_bound_shift(&inputs)?],
            "cv-plus" => vec![cv_plus_bound(&inputs)?],
            "full" => vec![full_bound_exch(&inputs)?],
            "full-shift" => vec![full_bound_shift(&inputs)?],
            "bian" => vec![bian_cv_bound(inputs.alpha, inputs.delta, folds, inputs.m)?],
            "liang" => vec![liang_comparison_bound(&inputs)?, liang_balanced_bound(&inputs)?],
            other => return Err(CliError::usage(format!("unknown bound {other:?}"))),
        }
    };
    if globals.json {
        return print_json(&json!({ "config": args, "inputs": inputs, "bounds": results }));
    }
    println!("{:<40} {:>12} {:>10}  {:<8} terms", "bound", "threshold", "failure", "");
    for r in &results {
        let terms: Vec<String> = r.terms.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
        println!(
            "{:<40} {:>12.6} {:>10.6}  {:<8} {}",
            r.name,
            r.miscoverage_threshold,
            r.failure_probability,
            if r.vacuous { "VACUOUS" } else { "" },
            terms.join(" ")
        );
    }
    Ok(())
}

fn scenario_spec(
    gamma: Option<f64>,
    k_target: Option<f64>,
    d: Option<usize>,
    b: Option<f64>,
    noise: Option<f64>,
) -> ScenarioSpec {
    let shift = match k_target {
        Some(k_target) => ShiftKind::SecondMoment { k_target },
        None => ShiftKind::Bounded {
            gamma: gamma.unwrap_or(0.0),
        },
    };
    ScenarioSpec {
        shift,
        d: d.unwrap_or(2),
        b: b.unwrap_or(1.0),
        noise_scale: noise.unwrap_or(0.5),
    }
}

/// Bounds whose guarantees cover `config`; ones that do not apply are left
/// out.
fn attached_bounds(config: &ExperimentConfig, args: &SimulateArgs) -> CliResult<Vec<BoundResult>> {
    let scenario = config.scenario.build()?;
    let method = config.method;
    let delta = args.delta.unwrap_or(0.1);
    let ridge = RidgeConfig::new(config.lambda, config.scenario.d, config.scenario.b, scenario.i_bound())?;
    let (b_ratio, k2, exchangeable) = match config.scenario.shift {
        ShiftKind::Bounded { gamma } => (scenario.ratio_bound(), scenario.second_moment_norm(), gamma == 0.0),
        ShiftKind::SecondMoment { .. } => (f64::INFINITY, scenario.second_moment_norm(), false),
    };
    let inputs = BoundInputs {
        alpha: method.alpha,
        delta,
        epsilon: delta,
        n: config.n_train,
        m: if method.method == Method::Split {
            config.n_cal
        } else {
            config.n_train
        },
        p: config.scenario.d,
        b_ratio: if b_ratio.is_finite() { b_ratio } else { 1.0 },
        k2,
        c: args.c.unwrap_or(1.0),
        ..BoundInputs::default()
    }
    .with_ridge_profile(&stability_profile(&ridge));
    let bounded = b_ratio.is_finite();
    let mut out = Vec::new();
    let mut push = |r: crate::Result<BoundResult>| {
        if let Ok(r) = r {
            out.push(r);
        }
    };
    let shift_ok = exchangeable || method.weighted || method.method == Method::Jaw;
    match method.method {
        Method::Split => {
            if exchangeable && !method.weighted {
                push(classical_split_bound(method.alpha, delta, config.n_cal));
            }
            if shift_ok && bounded {
                push(split_bound(&inputs));
            }
            if shift_ok {
                push(split_bound_second_moment(&inputs));
            }
        }
        Method::JackknifePlus | Method::Jaw | Method::JackknifePlusInflated { .. } | Method::Jackknife => {
            if exchangeable {
                push(jackknife_bound_exch(&inputs));
            }
            if shift_ok && bounded {
                push(jackknife_bound_shift(&inputs));
            }
        }
        Method::CvPlus { folds } => {
            let per_fold = BoundInputs {
                m: config.n_train / folds,
                ..inputs.clone()
            };
            if exchangeable {
                push(cv_plus_bound(&per_fold));
                push(bian_cv_bound(method.alpha, delta, folds, config.n_train / folds));
            }
        }
        Method::Full => {
            if exchangeable {
                push(full_bound_exch(&inputs));
            }
            if shift_ok && bounded {
                push(full_bound_shift(&inputs));
            }
        }
    }
    Ok(out)
}

pub(crate) fn simulate(globals: &Globals, args: SimulateArgs) -> CliResult<()> {
    let alpha = args.alpha.unwrap_or(0.1);
    let labels: Vec<String> = parse_list(args.methods.as_deref().unwrap_or("split"), "methods")?;
    if labels.is_empty() {
        return Err(CliError::usage("--methods lists no method"));
    }
    let scenario = scenario_spec(args.gamma, args.k_target, args.d, args.b, args.noise);
    let mut configs = Vec::new();
    for label in &labels {
        let method = parse_method(label, alpha, args.folds.unwrap_or(5), args.epsilon.unwrap_or(0.0))?;
        let config = ExperimentConfig {
            method,
            scenario,
            n_train: args.n.unwrap_or(100),
            n_cal: args.m.unwrap_or(100),
            replications: args.replications.unwrap_or(100),
            n_test: args.n_test.unwrap_or(10_000),
            lambda: args.lambda.unwrap_or(1.0),
            grid_points: args.grid_points.unwrap_or(129),
            master_seed: globals.seed,
        };
        config.validate()?;
        configs.push(config);
    }
    std::fs::create_dir_all(&globals.out_dir).map_err(|e| io_err(&globals.out_dir, e))?;
    let mut methods = Map::new();
    let mut summaries = Vec::new();
    for config in &configs {
        let label = config.method.label();
        let bounds = attached_bounds(config, &args)?;
        let report = run_experiment(config, &bounds, globals.threads)?;
        let trials_path = globals.out_dir.join(format!("trials_{label}.csv"));
        report.write_trials_csv(create(&trials_path)?)?;
        if let Some(bins) = args.histogram_bins {
            let hist_path = globals.out_dir.join(format!("histogram_{label}.csv"));
            report.write_histogram_csv(create(&hist_path)?, bins)?;
        }
        let summary = json!({
            "method": label,
            "mean_pe": report.mean_pe(),
            "mean_pe_stderr": report.mean_pe_stderr(),
            "pe_deciles": report.pe_deciles,
            "exceedance": report.exceedance,
        });
        if !globals.json {
            let exceed: Vec<String> = report.exceedance.iter().map(|(k, v)| format!("{k}:{v:.3}")).collect();
            println!(
                "{label}: mean_pe={:.4} (se {:.4}) q90={:.4} exceedance[{}]",
                report.mean_pe(),
                report.mean_pe_stderr(),
                report.pe_deciles.get("q90").copied().unwrap_or(f64::NAN),
                exceed.join(" ")
            );
        }
        summaries.push(summary);
        methods.insert(label, serde_json::to_value(&report)?);
    }
    let config = json!({ "seed": globals.seed, "simulate": args });
    let doc = json!({ "config": config, "methods": Value::Object(methods) });
    let path = globals.out_dir.join("report.json");
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    if globals.json {
        print_json(&Value::Array(summaries))?;
    }
    Ok(())
}

pub(crate) fn dkw(globals: &Globals, args: DkwArgs) -> CliResult<()> {
    let lemma = match args.lemma.as_deref().unwrap_or("a1").to_ascii_lowercase().as_str() {
        "a1" => DkwLemma::A1,
        "a2" => DkwLemma::A2,
        "a3" => DkwLemma::A3,
        other => return Err(CliError::usage(format!("unknown lemma {other:?}; use a1, a2 or a3"))),
    };
    if let Some(b) = args.b_ratio {
        if !(b >= 1.0) {
            return Err(CliError::usage(format!("ratio bound must be >= 1, got {b}")));
        }
    }
    let gamma = args.gamma.or(Some(0.5));
    let scenario = scenario_spec(gamma, args.k_target, args.d, args.b, args.noise).build()?;
    let config = DkwStudyConfig {
        ns: parse_list(args.ns.as_deref().unwrap_or("400,1600"), "ns")?,
        replications: args.replications.unwrap_or(500),
        delta: args.delta.unwrap_or(0.1),
        c: args.c.unwrap_or(1.0),
        lemma,
        declared_bound: args.b_ratio,
        master_seed: globals.seed,
    };
    let study = dkw_study(&scenario, &config, globals.threads)?;
    if globals.json {
        return print_json(&json!({ "config": args, "study": study }));
    }
    println!(
        "{:>8} {:>16} {:>12} {:>11}",
        "n", "median_sup_dev", "threshold", "exceedance"
    );
    for r in &study.rows {
        println!(
            "{:>8} {:>16.6} {:>12.6} {:>11.4}",
            r.n, r.median_deviation, r.threshold, r.exceedance
        );
    }
    for (w, ratio) in study.rows.windows(2).zip(&study.median_ratios) {
        println!("median ratio n={} / n={}: {ratio:.4}", w[0].n, w[1].n);
    }
    Ok(())
}

pub(crate) fn stability_audit(globals: &Globals, args: AuditArgs) -> CliResult<()> {
    let ns: Vec<usize> = parse_list(args.ns.as_deref().unwrap_or("20,80"), "ns")?;
    let lambdas: Vec<f64> = parse_list(args.lambdas.as_deref().unwrap_or("0.1,1"), "lambdas")?;
    let rows = stability_audit_study(
        &ns,
        &lambdas,
        args.datasets.unwrap_or(200),
        args.p.unwrap_or(2),
        args.b.unwrap_or(1.0),
        args.i_bound.unwrap_or(1.0),
        globals.seed,
    )?;
    let violations: usize = rows.iter().map(|r| r.violations).sum();
    if globals.json {
        print_json(&json!({ "config": args, "rows": rows }))?;
    } else {
        println!(
            "{:>6} {:>8} {:>9} {:>12} {:>12} {:>10} {:>12}",
            "n", "lambda", "datasets", "bound", "max_audited", "violations", "max_loo_gap"
        );
        for r in &rows {
            println!(
                "{:>6} {:>8} {:>9} {:>12.6e} {:>12.6e} {:>10} {:>12.3e}",
                r.n, r.lambda, r.datasets, r.bound, r.max_audited, r.violations, r.max_loo_gap
            );
        }
    }
    if violations > 0 {
        return Err(CliError::runtime(format!("{violations} stability violations")));
    }
    Ok(())
}
