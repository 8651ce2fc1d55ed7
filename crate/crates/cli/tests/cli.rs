use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;
use tempfile::TempDir;

fn cifbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cifbm"))
        .args(args)
        .output()
        .expect("spawn cifbm")
}

fn json_of(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn spec(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("specs")
        .join(name)
        .display()
        .to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

/// Samples drawn from a three-variable table with a strong pairwise term.
fn sample_file(dir: &Path) -> String {
    let rows: String = (0..300)
        .map(|k| match k % 6 {
            0 | 1 => "110\n",
            2 => "111\n",
            3 => "001\n",
            4 => "000\n",
            _ => "100\n",
        })
        .collect();
    write(dir, "samples.txt", &rows)
}

#[test]
fn coords_theta_lists_the_triple_interaction() {
    let v = json_of(&cifbm(&[
        "coords",
        &fixture("three_var.json"),
        "--system",
        "theta",
        "--json",
    ]));
    let labels: Vec<&str> = v["labels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l.as_str().unwrap())
        .collect();
    assert_eq!(labels.len(), 7);
    assert!(labels.contains(&"{1,2,3}"));
    // theta^{123} = log(p111 p100 p010 p001 / (p110 p101 p011 p000)).
    let p: [f64; 8] = [0.05, 0.2, 0.1, 0.05, 0.15, 0.1, 0.05, 0.3];
    let want = (p[7] * p[1] * p[2] * p[4] / (p[3] * p[5] * p[6] * p[0])).ln();
    let k = labels.iter().position(|l| *l == "{1,2,3}").unwrap();
    assert!((v["values"][k].as_f64().unwrap() - want).abs() < 1e-12);
    assert!((v["psi"].as_f64().unwrap() + p[0].ln()).abs() < 1e-12);
}

#[test]
fn coords_of_uniform_theta_are_zero() {
    let dir = TempDir::new().unwrap();
    let path = write(
        dir.path(),
        "u.json",
        r#"{"n": 2, "p": [0.25, 0.25, 0.25, 0.25]}"#,
    );
    let v = json_of(&cifbm(&["coords", &path, "--system", "theta", "--json"]));
    for x in v["values"].as_array().unwrap() {
        assert!(x.as_f64().unwrap().abs() < 1e-15);
    }
}

#[test]
fn malformed_distribution_exits_2() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"n": 2, "p": [0.5, 0.5, 0.1]}"#);
    assert_eq!(
        cifbm(&["coords", &bad, "--system", "eta"]).status.code(),
        Some(2)
    );
    let neg = write(dir.path(), "neg.json", r#"{"n": 1, "p": [1.5, -0.5]}"#);
    assert_eq!(
        cifbm(&["fisher", &neg, "--system", "theta"]).status.code(),
        Some(2)
    );
    let missing = dir.path().join("nope.json").display().to_string();
    assert_eq!(
        cifbm(&["coords", &missing, "--system", "p"]).status.code(),
        Some(2)
    );
}

#[test]
fn fisher_ratios_for_mixed_order_two() {
    let out = cifbm(&[
        "fisher",
        &fixture("three_var.json"),
        "--system",
        "mixed",
        "--l",
        "2",
        "--ratios",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields.len(), 2);
    assert!(fields.iter().all(|f| f.ends_with('%')));
    let v = json_of(&cifbm(&[
        "fisher",
        &fixture("three_var.json"),
        "--system",
        "theta",
        "--l",
        "2",
        "--ratios",
        "--json",
    ]));
    assert!((v["loss_ratio_percent"].as_f64().unwrap() - 12.943).abs() < 1e-3);
    assert!((v["tail_to_min_kept_percent"].as_f64().unwrap() - 92.3077).abs() < 1e-3);
}

#[test]
fn fisher_oracle_agrees_on_random_input() {
    let v = json_of(&cifbm(&[
        "fisher", "--random", "3", "--seed", "11", "--system", "eta", "--oracle", "--json",
    ]));
    assert!(v["oracle_max_deviation"].as_f64().unwrap() < 1e-6);
}

#[test]
fn fisher_eta_entry_is_sum_of_reciprocals() {
    let v = json_of(&cifbm(&[
        "fisher",
        &fixture("three_var.json"),
        "--system",
        "eta",
        "--json",
    ]));
    let labels: Vec<u64> = v["labels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l.as_u64().unwrap())
        .collect();
    let a = labels.iter().position(|&m| m == 0b011).unwrap();
    let b = labels.iter().position(|&m| m == 0b110).unwrap();
    let got = v["m"][a][b].as_f64().unwrap();
    assert!((got - (1.0 / 0.05 + 1.0 / 0.1)).abs() < 1e-9);
}

#[test]
fn cdcif_run_records_the_resolved_ratio() {
    let dir = TempDir::new().unwrap();
    let data = sample_file(dir.path());
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"learning_rate": 0.1, "max_epochs": 50, "cif_alpha": 35}"#,
    );
    let out_dir = dir.path().join("run");
    let out = cifbm(&[
        "train",
        "--model",
        "sbm",
        "--method",
        "cdcif",
        "--data",
        &data,
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = read_json(out_dir.join("manifest.json"));
    let r = m["config"]["cif_r"].as_f64().unwrap();
    assert!((r - (1.0 - 35.0 / 300.0)).abs() < 1e-12);
    assert_eq!(m["details"]["cif"]["r"].as_f64().unwrap(), r);
    assert!(out_dir.join("params.json").exists());
    assert!(out_dir.join("trace.csv").exists());
}

#[test]
fn zero_learning_rate_keeps_the_initial_parameters() {
    let dir = TempDir::new().unwrap();
    let data = sample_file(dir.path());
    let params = |epochs: usize, method: &str| {
        let cfg = write(
            dir.path(),
            "cfg.json",
            &format!(r#"{{"learning_rate": 0.0, "max_epochs": {epochs}}}"#),
        );
        let out_dir = dir.path().join(format!("run{epochs}{method}"));
        let out = cifbm(&[
            "train",
            "--model",
            "sbm",
            "--method",
            method,
            "--data",
            &data,
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        fs::read_to_string(out_dir.join("params.json")).unwrap()
    };
    let init = params(0, "ml");
    assert_eq!(params(20, "ml"), init);
    assert_eq!(params(20, "cd1"), init);
}

#[test]
fn ip_trace_is_monotone() {
    let dir = TempDir::new().unwrap();
    let data = sample_file(dir.path());
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"learning_rate": 0.5, "max_epochs": 0, "n_h": 2, "ip_iterations": 6, "sub_epochs": 30}"#,
    );
    let out_dir = dir.path().join("run");
    let v = json_of(&cifbm(&[
        "train",
        "--model",
        "rbm",
        "--method",
        "ip",
        "--data",
        &data,
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--json",
    ]));
    assert!(v["max_monotonicity_violation"].as_f64().unwrap() <= 1e-6);
    assert!(out_dir.join("best_params.json").exists());
}

#[test]
fn diverging_run_exits_3_with_artifacts() {
    let dir = TempDir::new().unwrap();
    let data = sample_file(dir.path());
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"learning_rate": 400.0, "max_epochs": 200, "divergence_patience": 2}"#,
    );
    let out_dir = dir.path().join("run");
    let out = cifbm(&[
        "train",
        "--model",
        "sbm",
        "--method",
        "ml",
        "--data",
        &data,
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out_dir.join("params.json").exists());
    let m = read_json(out_dir.join("manifest.json"));
    assert!(m["details"]["diverged_at"].is_u64());
}

#[test]
fn smoke_experiment_is_quick_and_complete() {
    let dir = TempDir::new().unwrap();
    let start = Instant::now();
    let out = cifbm(&[
        "experiment",
        "--spec",
        &spec("smoke.spec"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(start.elapsed() < Duration::from_secs(10));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.starts_with(
        "kind,method,n,n_h,N,target_id,repeat,metric_name,metric_value,epochs_or_iters,seed"
    ));
    assert_eq!(csv.lines().count(), 2);
    assert!(dir.path().join("summary.json").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn experiment_with_every_trial_failing_exits_4() {
    let dir = TempDir::new().unwrap();
    // A huge rate makes every trial diverge.
    let spec = write(
        dir.path(),
        "fail.spec",
        r#"{
  "kind": "sbm_density", "n": 3, "sample_sizes": [20], "n_targets": 1, "n_repeats": 2,
  "methods": [ { "method": "ml", "config": { "learning_rate": 50000.0, "max_epochs": 200, "divergence_patience": 1 } } ]
}"#,
    );
    let out = cifbm(&[
        "experiment",
        "--spec",
        &spec,
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn ingest_normalizes_lines() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "m.txt", "010\n110\n000\n");
    let v = json_of(&cifbm(&["ingest", "--input", &input, "--json"]));
    assert_eq!(v["n"], 3);
    assert_eq!(v["N"], 3);
    let out = PathBuf::from(v["out"].as_str().unwrap());
    let text = fs::read_to_string(&out).unwrap();
    assert!(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .eq(["010", "110", "000"]));
    assert!(PathBuf::from(format!("{}.manifest.json", out.display())).exists());
}

#[test]
fn ragged_ingest_exits_2() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "r.txt", "010\n11\n");
    assert_eq!(cifbm(&["ingest", "--input", &input]).status.code(), Some(2));
    let csv = write(dir.path(), "r.csv", "0,1\n1,2\n");
    assert_eq!(
        cifbm(&["ingest", "--input", &csv, "--format", "csv"])
            .status
            .code(),
        Some(2)
    );
}
