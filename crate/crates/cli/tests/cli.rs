use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedistill"));
    cmd.env_remove("FEDISTILL_OUT_DIR");
    cmd
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const FD: &str = r#"{
    "scheme": "fd",
    "seed": 2,
    "dataset": {"source": {"kind": "synthetic", "classes": 3, "per_class": 20, "dim": 4}},
    "model": {"hidden": [6]},
    "training": {"rounds": 2, "steps": 2, "batch": 4, "eta": 0.1, "lambda": 0.2}
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_metrics_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fd.json", FD);
    let out = dir.path().join("fd-out");
    let res = bin().arg("run").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("round,worker,loss,accuracy,uplink_bytes,downlink_bytes\r\n"));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn env_var_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fd.json", FD);
    let env_out = dir.path().join("from-env");
    let res = bin()
        .env("FEDISTILL_OUT_DIR", &env_out)
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("from-flag"))
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
    assert!(env_out.join("metrics.csv").exists());
    assert!(!dir.path().join("from-flag").exists());
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"scheme": "gossip", "seed": 1}"#);
    let res = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("scheme"));
    assert_eq!(code(&bin().arg("run").arg(dir.path().join("missing.json")).output().unwrap()), 1);
    assert_eq!(code(&bin().arg("bogus-subcommand").output().unwrap()), 1);
}

#[test]
fn runtime_errors_exit_with_two() {
    // Valid schema, but the IDX files do not exist.
    let dir = tempfile::tempdir().unwrap();
    let text = FD.replace(
        r#"{"kind": "synthetic", "classes": 3, "per_class": 20, "dim": 4}"#,
        r#"{"kind": "idx", "images": "/nonexistent/images", "labels": "/nonexistent/labels"}"#,
    );
    let cfg = write_config(dir.path(), "idx.json", &text);
    let res = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(code(&res), 2);
}

#[test]
fn analyze_ntk_emits_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let res = bin()
        .args(["analyze-ntk", "--a", "1", "--lambda", "4", "-c", "3", "--n", "10", "--r-max", "5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
    let csv = fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    // Header plus 6 rounds of 3 workers.
    assert_eq!(csv.lines().count(), 1 + 6 * 3);
}

#[test]
fn frd_emits_exchange_rows() {
    let dir = tempfile::tempdir().unwrap();
    let res = bin()
        .args(["frd", "--scheme", "pd", "-c", "2", "-s", "8", "--interval", "4", "--episodes", "8", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(dir.path().join("exchanges.csv")).unwrap();
    assert!(csv.starts_with("exchange,agent,rolling_score,uplink_bytes,downlink_bytes"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}

#[test]
fn compare_identical_and_mismatched_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fd.json", FD);
    let out = dir.path().join("r");
    assert_eq!(code(&bin().arg("run").arg(&cfg).arg("--out").arg(&out).output().unwrap()), 0);
    let metrics = out.join("metrics.csv");
    let res = bin().arg("compare").arg(&metrics).arg(&metrics).output().unwrap();
    assert_eq!(code(&res), 0);
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("d_accuracy"));

    let ntk = dir.path().join("ntk");
    bin().args(["analyze-ntk", "--r-max", "2", "--n", "4", "--out"]).arg(&ntk).output().unwrap();
    let res = bin().arg("compare").arg(&metrics).arg(ntk.join("residuals.csv")).output().unwrap();
    assert_eq!(code(&res), 1);
}
