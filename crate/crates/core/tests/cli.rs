//! End-to-end runs of the `catpark` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

use catpark::cli::model_file::ModelFile;
use catpark::models::unit_spot_parking;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catpark")).args(args).output().expect("binary runs")
}

fn scratch_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("catpark-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

#[test]
fn validate_passes_on_bundled_models() {
    for m in ["planar_maps", "unit_spot_parking"] {
        let out = run(&["--model", m, "validate"]);
        assert_eq!(out.status.code(), Some(0), "{m}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(json(&out)["pass"], true);
    }
}

#[test]
fn coeffs_csv_has_tutte_numbers() {
    let out = run(&["coeffs", "--order", "4", "--pmax", "0", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,p,coefficient"));
    let w0: Vec<&str> = lines.filter(|l| l.ends_with(",0,2") || l.split(',').nth(1) == Some("0")).collect();
    assert_eq!(w0, ["1,0,2", "2,0,9", "3,0,54", "4,0,378"]);
}

#[test]
fn configuration_errors_exit_2() {
    for args in [
        &["--model", "no_such_model", "validate"][..],
        &["frobnicate"],
        &["coeffs", "--order", "many"],
        &["--format", "xml", "validate"],
        &["eval", "--x", "one half"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let v = error_json(&out);
        assert!(v["error"]["kind"].is_string(), "{args:?}: {v}");
    }
}

#[test]
fn divergent_evaluation_exits_1() {
    let out = run(&["eval", "--x", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "numeric");
}

#[test]
fn sampling_is_reproducible_for_a_seed() {
    let args = ["--seed", "11", "sample", "--p", "4,8", "--samples", "200", "--x", "1/13"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["--seed", "12", "sample", "--p", "4,8", "--samples", "200", "--x", "1/13"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn out_dir_receives_json_and_csv() {
    let d = scratch_dir("out");
    let out = run(&["coeffs", "--order", "3", "--out", d.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("coeffs.json")).unwrap()).unwrap();
    assert_eq!(written, json(&out));
    assert!(std::fs::read_to_string(d.join("coeffs.csv")).unwrap().starts_with("n,p,coefficient"));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn model_file_round_trip() {
    let d = scratch_dir("model");
    let path = d.join("m.json");
    let file = ModelFile::from_weights(&unit_spot_parking());
    std::fs::write(&path, file.to_json()).unwrap();
    let from_file = run(&["--model", path.to_str().unwrap(), "coeffs", "--order", "5", "--format", "csv"]);
    let bundled = run(&["--model", "unit_spot_parking", "coeffs", "--order", "5", "--format", "csv"]);
    assert_eq!(from_file.status.code(), Some(0));
    assert_eq!(from_file.stdout, bundled.stdout);
    std::fs::write(&path, r#"{"name":"bad","K":2,"weights":[{"c":0,"k":2,"s":[1],"w":"1/2"}]}"#).unwrap();
    let bad = run(&["--model", path.to_str().unwrap(), "validate"]);
    assert_eq!(bad.status.code(), Some(2));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn lamperti_certifies_both_roots() {
    for (branch, root) in [("subordinator", 1.5), ("compensated", 2.5)] {
        let out = run(&["lamperti", "--branch", branch]);
        assert_eq!(out.status.code(), Some(0), "{branch}");
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains(&format!("{root}")), "{branch}: {text}");
    }
}
