//! Command-line verbs end to end: outputs, verdicts, determinism, exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use stlc::cli::run;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("stlc-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

fn verb(verb: &str, config: &str, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["stlc", verb, "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(args)
}

fn verdict(dir: &Path) -> String {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("verdict.json")).unwrap()).unwrap();
    v["kind"].as_str().unwrap().to_string()
}

#[test]
fn analyze_classifies_reference_potentials() {
    let dir = scratch("analyze");
    let cfg = write_config(&dir, r#"{"potential":{"type":"linear"},"k":0}"#);
    assert_eq!(verb("analyze", &cfg, &dir.join("linear"), &[]), 0);
    assert_eq!(verdict(&dir.join("linear")), "DRIFT");
    let drift: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("linear/drift.json")).unwrap()).unwrap();
    assert!((drift["a_k"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    let table = fs::read_to_string(dir.join("linear/coefficients.csv")).unwrap();
    assert!(table.starts_with("j,lambda_j,m_j,c_j"));

    let cfg = write_config(&dir, r#"{"potential":{"type":"coeffs","m":[],"slope0":0,"slope1":0},"k":0}"#);
    assert_eq!(verb("analyze", &cfg, &dir.join("zero"), &[]), 0);
    assert_eq!(verdict(&dir.join("zero")), "UNDETERMINED");

    let cfg = write_config(&dir, r#"{"potential":{"type":"balanced","k":1},"k":1}"#);
    assert_eq!(verb("analyze", &cfg, &dir.join("balanced"), &[]), 0);
    assert_eq!(verdict(&dir.join("balanced")), "QUADRATIC_STLC_CANDIDATE");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn drift_scan_is_satisfied_and_reproducible() {
    let dir = scratch("drift");
    let cfg = write_config(&dir, r#"{"potential":{"type":"linear"},"k":0,"t":0.05,"samples":100,"grid_n":128,"j_max":[10000,32]}"#);
    assert_eq!(verb("drift", &cfg, &dir.join("a"), &["--seed", "5"]), 0);
    assert_eq!(verb("drift", &cfg, &dir.join("b"), &["--seed", "5", "--jobs", "2"]), 0);
    let a = fs::read(dir.join("a/drift_scan.csv")).unwrap();
    let b = fs::read(dir.join("b/drift_scan.csv")).unwrap();
    assert_eq!(a, b);
    let mut rdr = csv::Reader::from_reader(a.as_slice());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| &r[12] == "true"));
    assert_eq!(verb("drift", &cfg, &dir.join("c"), &["--seed", "6"]), 0);
    assert_ne!(fs::read(dir.join("c/drift_scan.csv")).unwrap(), a);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn tables_for_kernels_coercivity_and_remainders() {
    let dir = scratch("tables");
    let cfg = write_config(&dir, r#"{"potential":{"type":"linear"},"k":0,"t":[0.05,0.1],"samples":4,"grid_n":64,"j_max":[2000,32]}"#);
    for v in ["kernels", "coercivity-scan", "remainders"] {
        assert_eq!(verb(v, &cfg, &dir, &[]), 0, "{v}");
    }
    for f in ["kernel.csv", "kernel_modulated.csv", "theta.csv"] {
        assert!(fs::read_to_string(dir.join(f)).unwrap().lines().count() > 100, "{f}");
    }
    assert_eq!(fs::read_to_string(dir.join("coercivity_scan.csv")).unwrap().lines().count(), 9);
    assert_eq!(fs::read_to_string(dir.join("remainders.csv")).unwrap().lines().count(), 9);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn moments_writes_solution_and_control() {
    let dir = scratch("moments");
    let cfg = write_config(&dir, r#"{"potential":{"type":"linear"},"t":0.5,"grid_n":256,"moments":[{"j":0,"re":0.3},{"j":2,"re":0.1,"im":0.2}]}"#);
    assert_eq!(verb("moments", &cfg, &dir, &[]), 0);
    let sol: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("moments.json")).unwrap()).unwrap();
    assert!(sol["max_residual"].as_f64().unwrap() < 1e-10);
    assert_eq!(fs::read_to_string(dir.join("control.csv")).unwrap().lines().count(), 257);
    let cfg = write_config(&dir, r#"{"potential":{"type":"linear"},"t":0.5,"moments":[{"j":0,"re":0.3,"im":1.0}]}"#);
    assert_eq!(verb("moments", &cfg, &dir, &[]), 2);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn synthesize_exit_codes() {
    let dir = scratch("synthesize");
    let cfg = write_config(&dir, r#"{"potential":{"type":"balanced","k":1},"k":1,"t":0.2,"target":{"type":"ground"}}"#);
    assert_eq!(verb("synthesize", &cfg, &dir.join("ground"), &[]), 0);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("ground/report.json")).unwrap()).unwrap();
    assert_eq!(rep["status"], "CONVERGED");
    assert_eq!(rep["iterations"], 0);

    let cfg = write_config(&dir, r#"{"potential":{"type":"linear"},"k":0,"t":0.2,"target":{"type":"mode","mode":0,"re":0,"im":0.001}}"#);
    assert_eq!(verb("synthesize", &cfg, &dir.join("drift"), &[]), 3);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("drift/report.json")).unwrap()).unwrap();
    assert_eq!(rep["status"], "FAILED");

    let cfg = write_config(&dir, r#"{"potential":{"type":"balanced","k":1},"k":1,"t":0.2,"target":{"type":"mode","mode":2,"re":0.5,"im":0}}"#);
    assert_eq!(verb("synthesize", &cfg, &dir.join("far"), &[]), 2);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = scratch("config");
    let cfg = write_config(&dir, r#"{"potential":{"type":"linear"},"t":[]}"#);
    assert_eq!(verb("analyze", &cfg, &dir, &[]), 2);
    let cfg = write_config(&dir, r#"{"potential":{"type":"nonsense"}}"#);
    assert_eq!(verb("analyze", &cfg, &dir, &[]), 2);
    let cfg = write_config(&dir, r#"{"potential":{"type":"linear"},"k":0}"#);
    assert_eq!(verb("synthesize", &cfg, &dir, &[]), 2);
    fs::remove_dir_all(&dir).unwrap();
}
