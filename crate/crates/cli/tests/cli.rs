use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

fn spbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spbn"))
        .args(args)
        .env_remove("SPBN_JOBS")
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = spbn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn normal_column(dir: &Path) -> (std::path::PathBuf, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
    let mean = x.iter().sum::<f64>() / 100.0;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0;
    let path = dir.join("x.csv");
    let body: String = x.iter().map(|v| format!("{v:?}\n")).collect();
    fs::write(&path, format!("x\n{body}")).unwrap();
    (path, var)
}

#[test]
fn select_normal_rule_and_ucv() {
    let dir = tempfile::tempdir().unwrap();
    let (path, var) = normal_column(dir.path());
    let nr = ok_json(&["select", p(&path), "--selector", "nr"]);
    let h = nr["bandwidth"][0][0].as_f64().unwrap();
    let expected = (4.0f64 / 3.0).powf(0.2) * 100f64.powf(-0.4) * var;
    assert!((h / expected - 1.0).abs() < 1e-12, "{h} vs {expected}");
    assert!((h / var - 0.16788).abs() < 1e-5);
    assert!(nr["objective"].is_null());

    let ucv = ok_json(&["select", p(&path), "--selector", "ucv", "--seed", "3"]);
    let objective = ucv["objective"].as_f64().unwrap();
    assert!(objective <= ucv["nr_objective"].as_f64().unwrap());
    assert_eq!(ucv["seed"], 3);
}

#[test]
fn select_restricts_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let out = spbn(&["synth", "smooth5", "-n", "150", "--seed", "2", "--out", p(&data)]);
    assert!(out.status.success());
    let r = ok_json(&["select", p(&data), "--selector", "scv", "--columns", "X3,X1"]);
    assert_eq!(r["columns"], serde_json::json!(["X3", "X1"]));
    assert_eq!(r["bandwidth"].as_array().unwrap().len(), 2);
    assert!(r["pilot"].is_array());
}

#[test]
fn data_and_numeric_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("m.csv");
    fs::write(&missing, "a,b\n1,2\n3,\n").unwrap();
    let out = spbn(&["select", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3") && err.contains("`b`"), "{err}");

    let text = dir.path().join("t.csv");
    fs::write(&text, "a\n1\nfoo\n").unwrap();
    assert_eq!(spbn(&["select", p(&text)]).status.code(), Some(2));

    let constant = dir.path().join("c.csv");
    fs::write(&constant, "a\n1\n1\n1\n1\n").unwrap();
    assert_eq!(spbn(&["select", p(&constant)]).status.code(), Some(3));

    assert_eq!(spbn(&["select", "--selector", "bogus", "x.csv"]).status.code(), Some(2));
    assert_eq!(spbn(&["select", p(&dir.path().join("absent.csv"))]).status.code(), Some(2));
    assert_eq!(spbn(&["frobnicate"]).status.code(), Some(2));

    let env_jobs = Command::new(env!("CARGO_BIN_EXE_spbn"))
        .args(["select", p(&constant)])
        .env("SPBN_JOBS", "many")
        .output()
        .unwrap();
    assert_eq!(env_jobs.status.code(), Some(2));
}

#[test]
fn synth_fit_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.csv");
    let valid = dir.path().join("valid.csv");
    let truth = dir.path().join("truth.json");
    let a = spbn(&["synth", "medium5", "-n", "300", "--seed", "5"]);
    let b = spbn(&["synth", "medium5", "-n", "300", "--seed", "5"]);
    assert_eq!(a.stdout, b.stdout);
    fs::write(&train, &a.stdout).unwrap();
    assert!(spbn(&["synth", "medium5", "-n", "200", "--seed", "6", "--out", p(&valid), "--structure-out", p(&truth)])
        .status
        .success());

    let model = dir.path().join("model.json");
    let fit = ok_json(&["fit", p(&train), "--structure", p(&truth), "--selector", "ucv", "--out", p(&model)]);
    assert!(fit["train_loglik"].as_f64().unwrap().is_finite());

    let score = ok_json(&["score", p(&model), p(&valid), "--truth", "medium5"]);
    let ll = score["loglik"].as_f64().unwrap();
    let exact = score["truth_loglik"].as_f64().unwrap();
    assert_eq!(score["loglik_abs_error"].as_f64().unwrap(), (ll - exact).abs());
    assert_eq!(score["n"], 200);

    // The stored model reproduces itself exactly.
    let text = fs::read_to_string(&model).unwrap();
    let reparsed = spbn::Spbn::from_json(&text).unwrap();
    assert_eq!(reparsed.to_json(), text);

    let rows = dir.path().join("rows.csv");
    ok_json(&["score", p(&model), p(&valid), "--rows-out", p(&rows)]);
    let total: f64 = fs::read_to_string(&rows)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - ll).abs() < 1e-9 * ll.abs());

    let sampled = spbn(&["synth", "--model", p(&model), "-n", "50", "--seed", "1"]);
    assert!(sampled.status.success());
    assert_eq!(String::from_utf8_lossy(&sampled.stdout).lines().count(), 51);
}

#[test]
fn learn_is_deterministic_and_respects_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(spbn(&["synth", "smooth5", "-n", "400", "--seed", "9", "--out", p(&data)]).status.success());
    let args = ["learn", p(&data), "--seed", "4", "--truth", "smooth5"];
    let a = spbn(&args);
    let b = spbn(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["shd"].as_u64().is_some());
    assert!(v["iterations"].as_u64().unwrap() > 0);

    let empty = ok_json(&["learn", p(&data), "--epsilon", "1e9"]);
    assert_eq!(empty["structure"]["arcs"].as_array().unwrap().len(), 0);
    assert_eq!(empty["iterations"], 0);

    assert_eq!(spbn(&["learn", p(&data), "--folds", "1"]).status.code(), Some(2));
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn experiment_is_byte_identical_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"scenario":"smooth5","sizes":[60,120],"replicates":3,"validation_size":100,
            "selectors":["UCV","NR"],"n_permutations":200,"output_dir":"first"}"#,
    );
    let summary = ok_json(&["experiment", p(&config), "--jobs", "2"]);
    assert_eq!(summary["rows"], 12);
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    ok_json(&["experiment", p(&config), "--out", p(&second), "--jobs", "1"]);
    let results = fs::read_to_string(first.join("results.csv")).unwrap();
    assert_eq!(results, fs::read_to_string(second.join("results.csv")).unwrap());
    assert_eq!(
        fs::read(first.join("report.json")).unwrap(),
        fs::read(second.join("report.json")).unwrap()
    );
    assert!(results.starts_with("selector,n,replicate,status,validation_loglik,loglik_abs_error,shd\n"));
    assert_eq!(results.lines().count(), 13);
    assert!(results.lines().nth(1).unwrap().starts_with("NR,60,0,ok,"));
    assert_eq!(fs::read_to_string(first.join("timings.csv")).unwrap().lines().count(), 13);

    let pvalues = fs::read_to_string(first.join("pvalues.csv")).unwrap();
    assert!(pvalues.starts_with("metric,n,method_a,method_b,raw_p,adjusted_p,reject\n"));
    // Three metrics, two sizes, one pair each.
    assert_eq!(pvalues.lines().count(), 7);

    let report_dir = dir.path().join("again");
    let out = spbn(&["report", p(&first.join("results.csv")), "--n-perm", "200", "--out", p(&report_dir)]);
    assert!(out.status.success());
    assert_eq!(
        fs::read_to_string(report_dir.join("pvalues.csv")).unwrap(),
        pvalues
    );
}

#[test]
fn shd_column_only_with_known_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pool.csv");
    assert!(spbn(&["synth", "rough5", "-n", "300", "--seed", "1", "--out", p(&data)]).status.success());
    let config = write_config(
        dir.path(),
        r#"{"scenario":"pool.csv","sizes":[80],"replicates":2,"validation_size":100,
            "selectors":["NR"],"output_dir":"out"}"#,
    );
    ok_json(&["experiment", p(&config)]);
    let results = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert!(results.starts_with("selector,n,replicate,status,validation_loglik\n"), "{results}");

    let fixed = write_config(
        dir.path(),
        r#"{"scenario":"rough5","sizes":[80],"replicates":2,"validation_size":100,
            "selectors":["NR"],"mode":"fixed","output_dir":"fixed"}"#,
    );
    ok_json(&["experiment", p(&fixed)]);
    let results = fs::read_to_string(dir.path().join("fixed/results.csv")).unwrap();
    assert!(results.starts_with("selector,n,replicate,status,validation_loglik,loglik_abs_error\n"));

    let too_big = write_config(
        dir.path(),
        r#"{"scenario":"pool.csv","sizes":[250],"replicates":1,"validation_size":100,
            "selectors":["NR"],"output_dir":"big"}"#,
    );
    assert_eq!(spbn(&["experiment", p(&too_big)]).status.code(), Some(2));

    let no_dir = write_config(dir.path(), r#"{"scenario":"rough5","sizes":[80],"selectors":["NR"]}"#);
    assert_eq!(spbn(&["experiment", p(&no_dir)]).status.code(), Some(2));
}
