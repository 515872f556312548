use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn spex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spex")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn small_config(dir: &tempfile::TempDir) -> PathBuf {
    let text = fs::read_to_string(config("rstar.toml"))
        .unwrap()
        .replace("repetitions = 3", "repetitions = 2")
        .replace("num_queries = 4", "num_queries = 2");
    let path = dir.path().join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_a_csv_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir);
    let out = dir.path().join("r.csv");
    let o = spex(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("algorithm,config,batch,seed,"));
}

#[test]
fn run_to_stdout_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir);
    let o = spex(&["run", "--config", cfg.to_str().unwrap(), "--format", "json", "--flags", "none"]);
    assert_eq!(o.status.code(), Some(0));
    let results = spex::report::read_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(results[0].summary.speedup.mean, 1.0);
}

#[test]
fn trace_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir);
    let log = dir.path().join("events.jsonl");
    let o = spex(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("r.csv").to_str().unwrap(),
        "--trace",
        log.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = spex(&["replay", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["reexecuted"], true);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir);
    let o = spex(&["run", "--config", cfg.to_str().unwrap(), "--flags", "t7"]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "batch_size = 0\n").unwrap();
    assert_eq!(spex(&["validate", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(spex(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("broken.jsonl");
    fs::write(&log, "{\"nonsense\": true}\n").unwrap();
    assert_eq!(spex(&["replay", log.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(spex(&["replay", dir.path().join("none.jsonl").to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn validate_accepts_shipped_configs() {
    for name in ["rstar.toml", "rebase.toml"] {
        let o = spex(&["validate", "--config", &config(name)]);
        assert_eq!(o.status.code(), Some(0));
    }
}
