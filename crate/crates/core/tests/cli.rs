use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command as Process, Output};

use tansurf::experiments::{Command, ExperimentConfig};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(sub: &str, config: &Path, out: &Path) -> Output {
    Process::new(env!("CARGO_BIN_EXE_tansurf"))
        .args([sub, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, value.to_string()).expect("write config");
    path
}

fn payload(out: &Path) -> serde_json::Value {
    let mut report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).expect("report")).expect("json");
    report.as_object_mut().expect("object").remove("metadata");
    report
}

#[test]
fn shipped_configs_parse() {
    let cases = [
        ("verify_sphere.json", Command::Verify),
        ("verify_torus.json", Command::Verify),
        ("solve_torus.json", Command::Solve),
        ("convergence_sphere.json", Command::Convergence),
        ("tau_sweep_sphere.json", Command::TauSweep),
        ("constants_sphere.json", Command::Constants),
    ];
    for (file, command) in cases {
        let text = fs::read_to_string(configs_dir().join(file)).expect("config file");
        let cfg = ExperimentConfig::load(&text, command).unwrap_or_else(|e| panic!("{file}: {e}"));
        assert_eq!(cfg.command, command);
    }
}

#[test]
fn verify_writes_report_and_tables_deterministically() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(
        dir.path(),
        "verify.json",
        serde_json::json!({
            "surface": {"kind": "sphere", "radius": 1.0},
            "samples": 24,
            "identities": ["CAYLEY", "RES2", "INEXT"]
        }),
    );
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let out = run("verify", &config, &first);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run("verify", &config, &second).status.success());
    assert_eq!(payload(&first), payload(&second));
    let report = payload(&first);
    assert_eq!(report["command"], "verify");
    assert_eq!(report["passed"], true);
    assert_eq!(report["provenance"]["config_sha256"].as_str().map(str::len), Some(64));
    let tables: Vec<_> = fs::read_dir(first.join("tables")).expect("tables dir").collect();
    assert!(!tables.is_empty());
}

#[test]
fn solve_writes_fields() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(
        dir.path(),
        "solve.json",
        serde_json::json!({
            "surface": {"kind": "torus", "major": 2.0, "minor": 0.5},
            "levels": [0],
            "write_fields": true
        }),
    );
    let out_dir = dir.path().join("out");
    let out = run("solve", &config, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let vtk = fs::read_to_string(out_dir.join("fields/solution_level0.vtk")).expect("vtk");
    assert!(vtk.starts_with("# vtk DataFile"));
    let report = payload(&out_dir);
    let residual = report["result"][0]["report"]["residual_norm"].as_f64().expect("residual");
    assert!(residual <= 1e-9, "residual {residual}");
}

#[test]
fn low_augmentation_parameter_is_an_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(
        dir.path(),
        "sweep.json",
        serde_json::json!({"surface": {"kind": "sphere", "radius": 1.0}, "levels": [1], "taus": [1.5, 100.0]}),
    );
    let out = run("tau-sweep", &config, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold"));
}

#[test]
fn unknown_config_field_is_an_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(
        dir.path(),
        "bad.json",
        serde_json::json!({"surface": {"kind": "sphere", "radius": 1.0}, "levles": [1]}),
    );
    let out = run("solve", &config, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}
