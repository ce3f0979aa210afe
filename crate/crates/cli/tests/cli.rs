use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stealthy-lab"))
        .args(args)
        .env_remove("STEALTHY_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

#[test]
fn hole_bound_prints_chain() {
    let out = lab(&["hole-bound", "--d", "1", "--b", "1.0"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    let r0 = r["results"]["r0"].as_f64().unwrap();
    assert!((r0 - 16.831873569064).abs() < 1e-9, "{r0}");
    assert_eq!(r["results"]["r_cubes"], 1);
    assert!(r["constants"]["autocorr0"].as_f64().unwrap() > 50.0);

    let half = report(&lab(&["hole-bound", "--d", "1", "--b", "0.5"]));
    assert!((half["results"]["r0"].as_f64().unwrap() - 2.0 * r0).abs() < 1e-9);
}

#[test]
fn zero_spectrum_field_has_zero_variance() {
    let out = lab(&["verify-linstat", "--target", "field", "--family", "constant", "--value", "0", "--n", "32"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(&out)["results"]["variance"].as_f64(), Some(0.0));
}

#[test]
fn oversized_erasure_is_rank_deficient() {
    let out = lab(&[
        "reconstruct-field", "--n", "8", "--box-length", "8", "--b", "0.8", "--inside", "0,1,2,3",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank-deficient"));
}

#[test]
fn erase_and_rebuild_passes() {
    let out = lab(&[
        "reconstruct-field", "--n", "16", "--box-length", "16", "--b", "1.2", "--inside", "3,4", "--trials", "5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(report(&out)["results"]["max_error"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn reruns_are_deterministic() {
    let args = ["gen-points", "--count", "16", "--box-length", "16", "--b", "0.5", "--configs", "2", "--seed", "9"];
    let a = report(&lab(&args));
    let b = report(&lab(&args));
    assert_eq!(a["determinism_hash"], b["determinism_hash"]);
    let strip = |mut v: Value| {
        v["timestamp"] = Value::Null;
        v
    };
    assert_eq!(strip(a.clone()), strip(b));
    let c = report(&lab(&["gen-points", "--count", "16", "--box-length", "16", "--b", "0.5", "--configs", "2", "--seed", "10"]));
    assert_ne!(a["determinism_hash"], c["determinism_hash"]);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "seed = 4\nd = 1\nb = 0.5\n").unwrap();
    let path = cfg.to_str().unwrap();
    let from_file = report(&lab(&["hole-bound", "--config", path]));
    assert_eq!(from_file["config"]["b"], 0.5);
    assert_eq!(from_file["config"]["seed"], 4);
    let overridden = report(&lab(&["hole-bound", "--config", path, "--b", "2.0", "--seed", "5"]));
    assert_eq!(overridden["config"]["b"], 2.0);
    assert_eq!(overridden["config"]["seed"], 5);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(lab(&["hole-bound", "--no-such-flag"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "nonsense = 1\n").unwrap();
    assert_eq!(lab(&["hole-bound", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(lab(&["sample-field", "--family", "unknown"]).status.code(), Some(2));
}

#[test]
fn predicate_failure_exits_one() {
    let out = lab(&["variance-decay", "--family", "power_law", "--exponent", "2", "--n", "512", "--max-slope", "-6"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("slope"));
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn writes_reports_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stealthy-lab"))
        .args(["sample-field", "--n", "16", "--count", "200", "--check-spectrum", "true", "--out", out_dir, "--format", "both"])
        .env("STEALTHY_LAB_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: Value = serde_json::from_str(&read(dir.path(), "sample-field.json")).unwrap();
    assert_eq!(json["pass"], true);
    assert!(read(dir.path(), "spectrum.csv").starts_with("mode,wavenumber,s,empirical"));
    assert!(read(dir.path(), "field_00000.csv").starts_with("# d=1"));
    assert!(dir.path().join("field_00199.bin").exists());
}

#[test]
fn points_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let gen = lab(&["gen-points", "--count", "32", "--box-length", "32", "--b", "0.5", "--out", out_dir]);
    assert_eq!(gen.status.code(), Some(0));
    let file = dir.path().join("points_00000.csv");
    let file = file.to_str().unwrap();
    for cmd in ["audit-anticonc", "find-holes"] {
        let out = lab(&[cmd, "--points", file]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = lab(&["verify-linstat", "--points", file, "--b-test", "0.5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
