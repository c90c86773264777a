use std::path::Path;
use std::process::{Command, Output};

fn gapscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapscan")).arg("--quiet").args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generated_dataset_feeds_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = gapscan(&["gen", "uniform", "-o", s(dir.path()), "--name", "base"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("base.csv");
    assert!(csv.exists() && dir.path().join("base.json").exists());

    let run = dir.path().join("run");
    let out = gapscan(&["run", "--data", s(&csv), "--rounds", "2", "--batch", "8", "--verify", "2", "-o", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(run.join("rounds.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let round: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(round["strategy"], "esa");
    }
    let progress: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("progress.json")).unwrap()).unwrap();
    assert!(progress.is_object());
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let out = gapscan(&["run", "--rows", "30", "--strategy", "hill-climb"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = gapscan(&["run", "--data", s(&dir.path().join("absent.csv")), "-o", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent"));
}
