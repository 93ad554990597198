use std::path::Path;
use std::process::{Command, Output};

fn vortexlab(args: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vortexlab"));
    cmd.env("VORTEXLAB_THREADS", "1");
    for a in args {
        cmd.arg(a);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const CONSTANT: &str = r#"{"phi": {"p": [[10, 0]]}, "k": 2, "R": 12, "n": 121,
    "pipeline": ["solve-complete", "verify"], "output_dir": "out"}"#;

#[test]
fn run_writes_report_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", CONSTANT);
    let out = vortexlab(&[Path::new("run"), &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["exit_code"], 0);
    assert!(dir.path().join("out/w_complete.csv").exists());
    assert!(dir.path().join("out/invariants.json").exists());
}

#[test]
fn malformed_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", &CONSTANT.replace("121", "120"));
    assert_eq!(vortexlab(&[Path::new("run"), &cfg]).status.code(), Some(2));
    let cfg = write(dir.path(), "junk.json", "{not json");
    assert_eq!(vortexlab(&[Path::new("run"), &cfg]).status.code(), Some(2));
}

#[test]
fn iteration_cap_exits_with_not_converged() {
    let dir = tempfile::tempdir().unwrap();
    let text = CONSTANT.replace("\"output_dir\"", "\"tolerances\": {\"max_newton\": 1}, \"output_dir\"");
    let cfg = write(dir.path(), "cap.json", &text);
    assert_eq!(vortexlab(&[Path::new("run"), &cfg]).status.code(), Some(3));
}

#[test]
fn compare_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.json", CONSTANT);
    let b = write(dir.path(), "b.json", &CONSTANT.replace("\"R\": 12, \"n\": 121", "\"R\": 10, \"n\": 101"));
    let out = vortexlab(&[Path::new("compare"), &a, &b]);
    assert_eq!(out.status.code(), Some(0));
    let cmp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cmp["window_half_width"], 5.0);
    assert!(cmp["max_difference"].as_f64().unwrap() < 1e-6);
}
