use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_successor-kit");

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> (i32, Value, Output) {
    let out = Command::new(BIN).args(args).env("SUCCESSOR_KIT_THREADS", "2").output().unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code().unwrap(), v, out)
}

const HARMONIC: &str = r#"{
  "schema_version": 1,
  "system": {"kind": "harmonic", "lambda": 1.0},
  "params": {"y0": 1.5, "m": 2},
  "integrator": {"rel_tol": 1e-11, "abs_tol": 1e-14}
}"#;

#[test]
fn successor_writes_report_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "h.json", HARMONIC);
    let out = dir.path().join("out");
    let (code, v, _) = run(&["successor", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(v["status"], "ok");
    let t1 = v["result"]["successor"]["t1"].as_f64().unwrap();
    assert!((t1 - 2.0 * std::f64::consts::PI).abs() < 1e-8);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("successor.json")).unwrap()).unwrap();
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], meta["config_hash"]);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(report.get("unix_time").is_none());
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x,y,theta\n"));
}

#[test]
fn hash_is_reproducible_and_tracks_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "h.json", HARMONIC);
    let c = cfg.to_str().unwrap();
    let (_, a, _) = run(&["iterate", "--config", c]);
    let (_, b, _) = run(&["iterate", "--config", c]);
    let (_, d, _) = run(&["iterate", "--config", c, "--y0", "2"]);
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_ne!(a["config_hash"], d["config_hash"]);
    assert_eq!(a["result"], b["result"]);
    let y2 = d["result"]["y_m"].as_f64().unwrap();
    assert!((y2 - 2.0).abs() < 1e-8);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "h.json", HARMONIC);
    let c = cfg.to_str().unwrap();
    assert_eq!(run(&["successor", "--config", c, "--y0", "-1"]).0, 1);
    assert_eq!(run(&["successor", "--config", dir.path().join("missing.json").to_str().unwrap()]).0, 2);
    let bad = write_config(dir.path(), "bad.json", r#"{"schema_version": 1, "system": {"kind": "scalar-second-order", "g_scalar": "x^^3"}}"#);
    assert_eq!(run(&["successor", "--config", bad.to_str().unwrap(), "--y0", "1"]).0, 2);
    let unknown = write_config(dir.path(), "u.json", r#"{"schema_version": 1, "system": {"kind": "pendulum"}}"#);
    assert_eq!(run(&["check", "--config", unknown.to_str().unwrap()]).0, 2);
    assert_eq!(run(&["no-such-command"]).0, 2);
    // The isochronous oscillator has no twist: the certificate is invalid.
    let (code, v, _) = run(&["scan-twist", "--config", c, "--alpha", "1", "--beta", "3", "--m", "1", "--k", "1", "--grid-n", "4"]);
    assert_eq!(code, 1);
    assert_eq!(v["result"]["valid"], false);
    let (code, v, _) = run(&["find-periodic", "--config", c, "--alpha", "1", "--beta", "3", "--grid-n", "4"]);
    assert_eq!(code, 1);
    assert_eq!(v["error"]["kind"], "domain");
}

#[test]
fn thresholds_and_find_periodic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "d.json",
        r#"{"schema_version": 1, "system": {"kind": "duffing_forced"},
            "params": {"m": 1, "k": 1, "grid_n": 16},
            "integrator": {"rel_tol": 1e-12, "abs_tol": 1e-14},
            "output": {"formats": ["json"]}}"#,
    );
    let c = cfg.to_str().unwrap();
    let (code, v, _) = run(&["thresholds", "--config", c]);
    assert_eq!(code, 0);
    let b = &v["result"]["thresholds"];
    let (y, z) = (b["Y_m"].as_f64().unwrap(), b["Z"].as_f64().unwrap());
    assert!(y < z);
    assert!(b["Sigma1"].as_f64().unwrap() > z * z);
    let out = dir.path().join("fp");
    let (code, v, _) = run(&["find-periodic", "--config", c, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{v}");
    let orbits = v["result"]["search"]["orbits"].as_array().unwrap();
    assert!(!orbits.is_empty());
    assert_eq!(v["result"]["invariants_hold"], true);
    assert!(out.join("find-periodic.json").exists());
    assert!(!out.join("twist.csv").exists(), "csv disabled in output.formats");
}

#[test]
fn check_and_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let cubic = write_config(
        dir.path(),
        "c.json",
        r#"{"schema_version": 1, "system": {"kind": "duffing_autonomous"}, "params": {"c1": 0.5, "R": 10}}"#,
    );
    let (code, v, _) = run(&["check", "--config", cubic.to_str().unwrap()]);
    assert_eq!(code, 0, "{v}");
    let eq = write_config(
        dir.path(),
        "e.json",
        r#"{"schema_version": 1,
            "system": {"kind": "general", "f": "y", "g": "x", "H": "0.5*(x^2 + y^2)"},
            "integrator": {"rel_tol": 1e-11, "abs_tol": 1e-13}}"#,
    );
    let (code, v, _) = run(&["equivalence", "--config", eq.to_str().unwrap()]);
    assert_eq!(code, 0, "{v}");
    assert!(v["result"]["equivalence"]["max_dt1"].as_f64().unwrap() < 1e-8);
}

#[test]
fn spiral_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.json",
        r#"{"schema_version": 1, "system": {"kind": "duffing_autonomous"},
            "params": {"orientation": "exiting", "turns": 3, "n_probes": 24}}"#,
    );
    let out = dir.path().join("sp");
    let (code, v, _) = run(&["spiral", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{v}");
    assert_eq!(v["result"]["anchors"].as_array().unwrap().len(), 4);
    let csv = std::fs::read_to_string(out.join("spiral.csv")).unwrap();
    assert!(csv.starts_with("arc_id,x,y\n"));
}
