use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn flowemu(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowemu")).current_dir(dir).env("RUST_LOG", "error").args(args).output().expect("spawn flowemu")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn must(o: Output) -> Output {
    assert_eq!(code(&o), 0, "flowemu failed: {}", stderr(&o));
    o
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

// 5 training runs, 4 steps on an 8 x 8 grid, no noise.
fn small_ensemble(dir: &Path) {
    let mut spec = read_json(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("specs/reference.json"));
    spec["n_runs"] = json!(5);
    spec["n_steps"] = json!(4);
    spec["grid"] = json!([8, 8]);
    fs::write(dir.join("small.json"), spec.to_string()).unwrap();
    must(flowemu(dir, &["--out", "syn", "synth", "--spec", "small.json"]));
}

fn modes(basis: &Path) -> Vec<u64> {
    let b = read_json(&basis.join("basis.json"));
    b["variables"].as_array().unwrap().iter().map(|v| v["n_modes"].as_u64().unwrap()).collect()
}

#[test]
fn empty_manifest_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("manifest.json"), r#"{"runs": []}"#).unwrap();
    let o = flowemu(dir.path(), &["--out", "basis", "extract", "--manifest", "manifest.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("runs"), "{}", stderr(&o));
}

#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_ensemble(d);

    must(flowemu(d, &["--out", "basis", "extract", "--manifest", "syn/manifest.json", "--energy-target", "1.0"]));
    must(flowemu(d, &["--out", "basis99", "extract", "--manifest", "syn/manifest.json"]));
    let (full, trimmed) = (modes(&d.join("basis")), modes(&d.join("basis99")));
    assert!(full.iter().zip(&trimmed).all(|(a, b)| a >= b), "{full:?} vs {trimmed:?}");
    assert_eq!(full, vec![3, 3]);

    // extraction is deterministic down to the bytes
    must(flowemu(d, &["--out", "again", "extract", "--manifest", "syn/manifest.json", "--energy-target", "1.0"]));
    for f in ["basis.json", "grid.bin", "modes_u.bin", "modes_v.bin", "coeffs.bin"] {
        assert_eq!(fs::read(d.join("basis").join(f)).unwrap(), fs::read(d.join("again").join(f)).unwrap(), "{f} differs");
    }

    must(flowemu(d, &["--seed", "3", "--out", "model", "fit", "--basis", "basis", "--starts", "1", "--lambda", "0.01"]));
    must(flowemu(d, &["--out", "pred", "predict", "--basis", "basis", "--model", "model", "--run", "syn/run_002"]));
    let summary = read_json(&d.join("pred/summary.json"));
    for (var, regions) in summary["mre"].as_object().unwrap() {
        for r in regions.as_array().unwrap() {
            let max = r["max"].as_f64().unwrap();
            assert!(max < 1e-6, "{var}/{}: MRE {max}", r["region"]);
        }
    }

    must(flowemu(d, &["--out", "edges", "couplings", "--model", "model", "--top-k", "3"]));
    assert!(d.join("edges/edges.csv").exists());

    // a basis file edited after extraction makes the fit stale
    let coeffs = d.join("basis/coeffs.bin");
    let mut bytes = fs::read(&coeffs).unwrap();
    bytes[0] ^= 1;
    fs::write(&coeffs, bytes).unwrap();
    let o = flowemu(d, &["--out", "model2", "fit", "--basis", "basis", "--starts", "1"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let o = flowemu(d, &["--out", "pred2", "predict", "--basis", "basis", "--model", "model", "--run", "syn/run_002"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn fit_needs_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_ensemble(d);
    let mut m = read_json(&d.join("syn/manifest.json"));
    m["runs"] = json!(["run_000"]);
    fs::write(d.join("syn/one.json"), m.to_string()).unwrap();
    must(flowemu(d, &["--out", "basis", "extract", "--manifest", "syn/one.json"]));
    let o = flowemu(d, &["--out", "model", "fit", "--basis", "basis", "--starts", "1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("n >= 2"), "{}", stderr(&o));
}
