use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lmflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmflow")).args(args).output().expect("binary runs")
}

fn solve_args<'a>(dir: &'a str, summary: &'a str) -> Vec<&'a str> {
    vec![
        "solve", "--problem", "quadratic", "--n", "30", "--seed", "3", "--method", "adaptive", "--h0", "10",
        "--out-dir", dir, "--json-summary", summary,
    ]
}

#[test]
fn solve_writes_summary_and_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let summary = tmp.path().join("summary.json");
    let out = lmflow(&solve_args(dir, summary.to_str().unwrap()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let json: Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(json["problem"], "quadratic");
    assert_eq!(json["seed"], 3);
    let methods = json["per_method"].as_object().unwrap();
    assert_eq!(methods.len(), 1);
    let (label, m) = methods.iter().next().unwrap();
    for key in ["avg_step", "avg_backtracks", "iterations", "final_f_gap"] {
        assert!(m.get(key).is_some(), "missing {key}");
    }
    let iterations = m["iterations"].as_u64().unwrap() as usize;

    let csv = std::fs::read_to_string(Path::new(dir).join(format!("{label}.csv"))).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,f,f_gap,grad_norm,eta,h,backtracks"));
    assert_eq!(lines.count(), iterations + 1);
}

#[test]
fn replay_is_byte_identical() {
    let runs: Vec<(tempfile::TempDir, Vec<u8>)> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let dir = tmp.path().to_str().unwrap().to_string();
            let summary = tmp.path().join("s.json").to_str().unwrap().to_string();
            assert!(lmflow(&solve_args(&dir, &summary)).status.success());
            let csv = std::fs::read(tmp.path().join("adaptive_h0_10.csv")).unwrap();
            (tmp, csv)
        })
        .collect();
    assert!(!runs[0].1.is_empty());
    assert_eq!(runs[0].1, runs[1].1);
}

#[test]
fn verify_exit_codes() {
    let ok = lmflow(&["verify", "--problem", "nonconvex_pl", "--max-iter", "500"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    // Halving the true constant of 8 must be caught.
    let bad = lmflow(&["verify", "--problem", "nonconvex_pl", "--max-iter", "500", "--lipschitz", "4"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn invalid_configuration_exits_with_two() {
    let out = lmflow(&["solve", "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let missing = lmflow(&["solve", "--instance", "/nonexistent/instance.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn emit_writes_one_file_per_method() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lmflow(&["emit", "--problem", "nonconvex_pl", "--out-dir", tmp.path().to_str().unwrap()]);
    assert!(out.status.success());
    let files = String::from_utf8_lossy(&out.stdout).lines().count();
    assert_eq!(files, 10);
    assert!(tmp.path().join("armijo_c0.0001.csv").exists());
}
