use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{"grid": {"L": 30, "N": 601}, "evo": {"T": 10}, "virial": {"samples": 5}}"#;

fn nls(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nls"))
        .args(args)
        .env_remove("NLS_OUT")
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    std::fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

fn only_json(dir: &Path, prefix: &str) -> Value {
    let path = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name.starts_with(prefix) && name.ends_with(".json")
        })
        .expect("summary written");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bound_state_prints_and_writes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = nls(&["bound-state", "--config", &cfg, "--p", "1", "--lambda", "-1", "--z", "0.05"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("E = ") && text.contains("residual = "));
    let summary = only_json(dir.path(), "bound-state-");
    assert!(summary["result"]["residual"].as_f64().unwrap() < 1e-9);
    // the embedded config reproduces the file name hash
    let cfg: nls_core::config::RunConfig = serde_json::from_value(summary["config"].clone()).unwrap();
    assert_eq!(cfg.hash(), summary["config_hash"].as_str().unwrap());
    let csv = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let body = std::fs::read_to_string(csv).unwrap();
    assert!(body.starts_with("# config: "));
    assert_eq!(body.lines().count(), 2 + 601);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"grid": {"L": 30, "N": 601, "M": 1}}"#).unwrap();
    let out = nls(&["spectrum", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "Serialization");

    let out = nls(&["spectrum", "--grid.N", "600"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = nls(&["no-such-command"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn module_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    // focusing sign is outside the dispersion regime
    let out = nls(&["thm-dispersion", "--config", &cfg, "--nl.lambda", "-1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "WrongSign");

    let out = nls(&["thm-selection", "--config", &cfg, "--p", "0.4", "--strict"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "RequiresP");
}

#[test]
fn overrides_and_env_out() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("env");
    let cfg = small_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_nls"))
        .args(["spectrum", "--config", &cfg, "--op.q", "2", "--out"])
        .arg(dir.path().join("ignored"))
        .env("NLS_OUT", &env_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(!dir.path().join("ignored").exists());
    let summary = only_json(&env_dir, "spectrum-");
    assert_eq!(summary["config"]["op"]["q"], 2.0);
    assert_eq!(summary["config"]["grid"]["N"], 601);
    assert!((summary["result"]["eigenvalue"].as_f64().unwrap() + 1.0).abs() < 1e-2);
}

#[test]
fn decompose_and_evolve_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = nls(&["decompose", "--config", &cfg, "--z", "0.1", "--eps", "0.01"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = only_json(dir.path(), "decompose-");
    assert!((summary["result"]["pc"]["re_z"].as_f64().unwrap() - 0.1).abs() < 1e-12);

    let out = nls(&["evolve", "--config", &cfg, "--eps", "0.05", "--convention", "hc"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("evolve-") && p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let body = std::fs::read_to_string(csv).unwrap();
    let mut lines = body.lines().skip(1);
    assert_eq!(lines.next().unwrap(), nls_core::experiments::CSV_HEADER);
    assert_eq!(lines.count(), 21);
}

#[test]
fn experiment_reports_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let cfg = small_config(dir.path());
        let out = nls(&["residuals", "--config", &cfg, "--exp.eps-ladder", "0.05"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let ra = only_json(a.path(), "residuals-");
    let rb = only_json(b.path(), "residuals-");
    assert_eq!(ra["rows"], rb["rows"]);
    assert_eq!(ra["config_hash"], rb["config_hash"]);
}
