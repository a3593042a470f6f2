use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn alocv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alocv"))
        .args(args)
        .current_dir(dir)
        .env_remove("ALOCV_THREADS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad json ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn one_point(dir: &Path) {
    fs::write(dir.join("one.csv"), "x_1,y\n2,3\n").unwrap();
}

/// Small regression problem written deterministically without the library.
fn small(dir: &Path) {
    let mut text = String::from("x_1,x_2,x_3,y\n");
    for i in 0..25 {
        let a = ((i * 37 % 17) as f64 - 8.0) / 5.0;
        let b = ((i * 11 % 13) as f64 - 6.0) / 4.0;
        let c = ((i * 7 % 5) as f64 - 2.0) / 2.0;
        let y = a - 0.5 * b + 0.1 * ((i * 3 % 7) as f64 - 3.0);
        text.push_str(&format!("{a},{b},{c},{y}\n"));
    }
    fs::write(dir.join("small.csv"), text).unwrap();
}

#[test]
fn fit_one_point_ridge() {
    let dir = tempfile::tempdir().unwrap();
    one_point(dir.path());
    let out = alocv(&["fit", "--data", "one.csv", "--loss", "square", "--penalty", "ridge:4", "--tol", "1e-12"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!((v["coefficients"][0].as_f64().unwrap() - 0.75).abs() < 1e-9);
    assert_eq!(v["certified"], Value::Bool(true));
    assert!(v["kkt_residual"].as_f64().unwrap() <= 1e-12);
    assert_eq!(v["active_set"], serde_json::json!([0]));
}

#[test]
fn missing_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = alocv(&["fit", "--data", "nope.csv", "--penalty", "ridge:1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn malformed_flags_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    one_point(dir.path());
    for args in [
        vec!["fit", "--data", "one.csv", "--penalty", "lasso:1"],
        vec!["fit", "--data", "one.csv", "--penalty", "ridge:1", "--loss", "hinge"],
        vec!["fit", "--data", "one.csv", "--penalty", "ridge:-1"],
        vec!["fit", "--data", "one.csv", "--penalty", "ridge:1", "--tol", "0"],
        vec!["bogus"],
    ] {
        assert_eq!(alocv(&args, dir.path()).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn unreachable_tolerance_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    let out = alocv(
        &["fit", "--data", "small.csv", "--penalty", "enet:0.5,0.1", "--tol", "1e-300", "--max-iter", "5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["certified"], Value::Bool(false));
}

#[test]
fn risk_one_point_with_loo() {
    let dir = tempfile::tempdir().unwrap();
    one_point(dir.path());
    fs::write(dir.path().join("sigma.csv"), "1\n").unwrap();
    let out = alocv(
        &[
            "risk", "--data", "one.csv", "--loss", "square", "--penalty", "ridge:4", "--tol", "1e-13", "--with-loo",
            "--sigma", "sigma.csv", "--weights", "w.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!((v["alo"].as_f64().unwrap() - 9.0).abs() < 1e-9);
    assert!((v["loo"].as_f64().unwrap() - 9.0).abs() < 1e-9);
    assert!((v["weight_mf"].as_f64().unwrap() - 0.125).abs() < 1e-12);
    assert!((v["rem"][0].as_f64().unwrap() - 0.4375).abs() < 1e-9);
}

#[test]
fn risk_without_sigma_and_weights_schema() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    let out = alocv(
        &["risk", "--data", "small.csv", "--penalty", "enet:0.5,0.2", "--g", "abs", "--weights", "w.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["weight_mf"].is_null() && v["rem"].is_null() && v["mf_trace"].is_null());
    assert!(v["weight_df_ratio"].is_f64());
    assert!(v["loo"].is_null());
    let mut rdr = csv::Reader::from_path(dir.path().join("w.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["i", "W_i", "leverage", "denominator"]);
    assert_eq!(rdr.records().count(), 25);
}

#[test]
fn experiment_runs_reproducibly_and_flags_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment": "E2", "n_grid": [40, 60], "replicates": 2, "master_seed": 3, "output_dir": "out"}"#;
    fs::write(dir.path().join("e2.json"), cfg).unwrap();
    let out = alocv(&["experiment", "--config", "e2.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read(dir.path().join("out/E2_results.csv")).unwrap();
    let out = alocv(&["experiment", "--config", "e2.json", "--output-dir", "again"], dir.path());
    assert!(out.status.success());
    assert_eq!(fs::read(dir.path().join("again/E2_results.csv")).unwrap(), first);

    let bad = r#"{"experiment": "E2", "n_grid": [40], "replicates": 2, "solver_tol": 1e-300, "output_dir": "bad"}"#;
    fs::write(dir.path().join("bad.json"), bad).unwrap();
    assert_eq!(alocv(&["experiment", "--config", "bad.json"], dir.path()).status.code(), Some(3));

    let ratio = r#"{"experiment": "E1", "aspect_ratio": 50.0}"#;
    fs::write(dir.path().join("ratio.json"), ratio).unwrap();
    assert_eq!(alocv(&["experiment", "--config", "ratio.json"], dir.path()).status.code(), Some(1));
}

#[test]
fn verify_passes_on_a_smooth_problem() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    let out = alocv(&["verify", "--data", "small.csv", "--penalty", "ridge:0.2", "--probes", "5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let v = json(&out);
    assert_eq!(v["passed"], Value::Bool(true));
    assert_eq!(v["violations"], serde_json::json!(0));
    assert_eq!(v["derivative_probes"]["tested"], serde_json::json!(5));
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    one_point(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_alocv"))
        .args(["fit", "--data", "one.csv", "--penalty", "ridge:4"])
        .current_dir(dir.path())
        .env("ALOCV_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_alocv"))
        .args(["fit", "--data", "one.csv", "--penalty", "ridge:4"])
        .current_dir(dir.path())
        .env("ALOCV_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}
