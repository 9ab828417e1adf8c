use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn covshift() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_covshift"));
    c.env_remove("COVSHIFT_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    covshift().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Ten rows of `x1,x2,y` with y = x1 − x2 plus a small deterministic wiggle.
fn write_data(dir: &Path) -> PathBuf {
    let path = dir.join("train.csv");
    let mut text = String::from("x1,x2,y\n");
    for i in 0..10 {
        let a = (i as f64 - 4.5) / 10.0;
        let b = ((i * 7 % 10) as f64 - 4.5) / 10.0;
        let y = a - b + 0.05 * ((i % 3) as f64 - 1.0);
        text.push_str(&format!("{a},{b},{y}\n"));
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn cv_plus_rejects_folds_that_do_not_divide_n() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_data(tmp.path());
    let o = run(&[
        "predict",
        "--data",
        data.to_str().unwrap(),
        "--x",
        "0.1,0.2",
        "--method",
        "cv_plus",
        "--folds",
        "3",
        "--alpha",
        "0.2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("folds must divide n"), "{}", stderr(&o));
}

#[test]
fn predict_requires_alpha() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_data(tmp.path());
    let o = run(&["predict", "--data", data.to_str().unwrap(), "--x", "0,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--alpha"));
}

#[test]
fn predict_prints_one_interval_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_data(tmp.path());
    let out = tmp.path().join("intervals.csv");
    let o = run(&[
        "predict",
        "--data",
        data.to_str().unwrap(),
        "--x",
        "0.1,0.2",
        "--x",
        "-0.3,0.1",
        "--method",
        "jackknife_plus",
        "--alpha",
        "0.2",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x1,x2,lower,upper");
    assert_eq!(lines.len(), 3);
    let fields: Vec<f64> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
    assert!(fields[2] < fields[3]);
}

#[test]
fn predict_full_writes_grid_membership() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_data(tmp.path());
    let out = tmp.path().join("full.csv");
    let o = run(&[
        "predict",
        "--data",
        data.to_str().unwrap(),
        "--x",
        "0,0",
        "--method",
        "full_weighted",
        "--ratio-tilt",
        "0.3",
        "--alpha",
        "0.3",
        "--grid-points",
        "17",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("point,y,member\n"));
    assert_eq!(csv.lines().count(), 18);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0") || l.ends_with(",1")));
}

#[test]
fn predict_json_reports_intervals() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_data(tmp.path());
    let o = run(&[
        "--json",
        "predict",
        "--data",
        data.to_str().unwrap(),
        "--x",
        "0.1,0.1",
        "--method",
        "split",
        "--alpha",
        "0.5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["method"], "split");
    assert_eq!(v["config"]["alpha"], 0.5);
    assert_eq!(v["predictions"].as_array().unwrap().len(), 1);
}

#[test]
fn wrong_feature_count_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_data(tmp.path());
    let o = run(&[
        "predict",
        "--data",
        data.to_str().unwrap(),
        "--x",
        "0.1",
        "--alpha",
        "0.2",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_file_is_a_runtime_error() {
    let o = run(&[
        "predict",
        "--data",
        "/nonexistent/train.csv",
        "--x",
        "0",
        "--alpha",
        "0.2",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bounds_split_example() {
    let o = run(&[
        "bounds",
        "--bound",
        "split",
        "--alpha",
        "0.1",
        "--delta",
        "0.1",
        "--m",
        "10000",
        "--b-ratio",
        "1.2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("0.165458"), "{out}");
    assert!(!out.contains("VACUOUS"));
}

#[test]
fn bounds_flags_vacuous_results() {
    let o = run(&["bounds", "--bound", "split-second-moment", "--delta", "1", "--m", "64"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("VACUOUS"));
}

#[test]
fn bounds_theorem_alias_and_json() {
    let o = run(&["--json", "bounds", "--theorem", "liang", "--n", "1000000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let bounds = v["bounds"].as_array().unwrap();
    assert_eq!(bounds.len(), 2);
    assert_eq!(bounds[1]["parameters"]["m"], 251.0);
}

#[test]
fn bounds_all_and_unknown() {
    let o = run(&["bounds", "--all"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().count() >= 8);
    assert_eq!(run(&["bounds", "--bound", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["bounds"]).status.code(), Some(2));
    assert_eq!(
        run(&["bounds", "--bound", "split", "--alpha", "1.5"]).status.code(),
        Some(2)
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 4\n\n[bounds]\nbound = \"split\"\nalpha = 0.2\nm = 10000\nb_ratio = 1.2\n",
    )
    .unwrap();
    let from_file = run(&["--json", "--config", cfg.to_str().unwrap(), "bounds"]);
    assert!(from_file.status.success(), "{}", stderr(&from_file));
    let v: Value = serde_json::from_str(&stdout(&from_file)).unwrap();
    assert_eq!(v["inputs"]["alpha"], 0.2);
    let overridden = run(&[
        "--json",
        "--config",
        cfg.to_str().unwrap(),
        "bounds",
        "--alpha",
        "0.1",
        "--delta",
        "0.1",
    ]);
    let v: Value = serde_json::from_str(&stdout(&overridden)).unwrap();
    assert_eq!(v["inputs"]["alpha"], 0.1);
    assert!((v["bounds"][0]["miscoverage_threshold"].as_f64().unwrap() - 0.165_457_79).abs() < 1e-7);

    std::fs::write(&cfg, "[bounds]\nalhpa = 0.2\n").unwrap();
    assert_eq!(
        run(&["--config", cfg.to_str().unwrap(), "bounds", "--all"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn dkw_rejects_ratio_bound_below_one() {
    let o = run(&["dkw", "--b-ratio", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["dkw", "--lemma", "a9"]).status.code(), Some(2));
}

#[test]
fn dkw_prints_table_and_ratio() {
    let o = run(&["dkw", "--ns", "100,400", "--replications", "40"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 4);
    assert!(out.contains("median ratio n=100 / n=400"));
}

#[test]
fn stability_audit_reports_no_violations() {
    let o = run(&[
        "--json",
        "stability-audit",
        "--datasets",
        "10",
        "--ns",
        "10,40",
        "--lambdas",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["violations"] == 0));
}

#[test]
fn simulate_writes_reports_to_env_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = covshift()
        .env("COVSHIFT_OUT_DIR", &out)
        .args([
            "simulate",
            "--methods",
            "split,split_weighted",
            "--n",
            "30",
            "--m",
            "30",
            "--replications",
            "5",
            "--n-test",
            "300",
            "--gamma",
            "0.5",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let methods = report["methods"].as_object().unwrap();
    assert_eq!(methods.keys().collect::<Vec<_>>(), ["split", "split_weighted"]);
    assert_eq!(methods["split"]["trials"].as_array().unwrap().len(), 5);
    assert!(methods["split_weighted"]["exceedance"].get("split").is_some());
    let trials = std::fs::read_to_string(out.join("trials_split.csv")).unwrap();
    assert_eq!(trials.lines().count(), 6);
}

#[test]
fn simulate_rejects_bad_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    assert_eq!(
        run(&["--out-dir", dir, "simulate", "--methods", "magic"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["--out-dir", dir, "simulate", "--methods", "jackknife_weighted"])
            .status
            .code(),
        Some(2)
    );
    let o = run(&[
        "--out-dir",
        dir,
        "simulate",
        "--methods",
        "cv_plus",
        "--n",
        "10",
        "--folds",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("folds must divide n"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert!(run(&["--help"]).status.success());
}
