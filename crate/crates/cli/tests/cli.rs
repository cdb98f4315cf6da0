use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_deeplimit");
const CONFIGS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");

fn deeplimit(args: &[&str], out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn toy() -> String {
    format!("{CONFIGS}/toy.toml")
}

/// Writes `body` as a config next to the bundled toy data.
fn config_with(dir: &Path, body: &str) -> String {
    let data = Path::new(CONFIGS).join("data/toy.csv");
    let path = dir.join("run.toml");
    fs::write(&path, format!("data = {:?}\n{body}", data.display().to_string())).unwrap();
    path.display().to_string()
}

#[test]
fn unknown_command_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = deeplimit(&["frobnicate", "--config", &toy()], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert!(err.contains("grad-check"), "{err}");
}

#[test]
fn missing_config_flag_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!deeplimit(&["grad-check"], dir.path()).status.success());
}

#[test]
fn grad_check_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = deeplimit(&["grad-check", "--config", &toy()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("grad-check.csv")).unwrap();
    assert!(csv.starts_with("instance,coordinate,analytic,finite_difference,relative_error\r\n"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("grad-check.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "grad-check");
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["summary"]["max_relative_error"].as_f64().unwrap() < 1e-5);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn single_rung_ladder_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(
        dir.path(),
        "[ladder]\nn_values = [4]\ncontinuum_nodes = 5\ncontinuum_max_iters = 50\n[solver]\nsteps = 64\n",
    );
    let out = deeplimit(&["ladder", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("ladder.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
}

#[test]
fn unknown_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(dir.path(), "[model]\nalpha5 = 1.0\n");
    let out = deeplimit(&["grad-check", "--config", &cfg], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha5"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = deeplimit(&["morrey-sweep", "--config", &toy(), "--seed", "123"], dir.path());
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("morrey-sweep.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 123);
    assert_eq!(manifest["config"]["seed"], 123);
    assert_eq!(manifest["summary"]["violations"], 0);
}

#[test]
fn commands_needing_data_fail_without_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.toml");
    fs::write(&path, "").unwrap();
    let out = deeplimit(&["train-discrete", "--config", path.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("data"));
    // the synthetic drivers need no data
    let out = deeplimit(&["recovery-check", "--config", path.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn threads_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["euler-bound", "--config", &toy(), "--out"])
        .arg(dir.path())
        .env("DEEPLIMIT_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("euler-bound.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["violations"], 0);
}
