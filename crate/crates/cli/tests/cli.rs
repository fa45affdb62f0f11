use std::path::Path;
use std::process::{Command, Output};

fn dispatchd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dispatchd")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(dispatchd(&["--help"]).status.code(), Some(0));
    assert_eq!(dispatchd(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let out = dispatchd(&["synth", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(dispatchd(&[]).status.code(), Some(1));
    assert_eq!(dispatchd(&["probe-convergence", "--agents", "0"]).status.code(), Some(1));
}

#[test]
fn synth_then_build_state_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    let states = dir.path().join("states");
    let out = dispatchd(&["synth", "--sbs", "2", "--days", "2", "--seed", "3", "--out", path(&traces)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["day0_tasks.csv", "day1_solar.csv", "bs_config.toml", "manifest.toml", "config.toml", "VERSION"] {
        assert!(traces.join(f).exists(), "missing {f}");
    }
    let out = dispatchd(&["build-state", "--traces", path(&traces), "--out", path(&states)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(states.join("day0_state.csv").exists() && states.join("day1_state.csv").exists());
}

#[test]
fn corrupted_trace_exits_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    assert_eq!(dispatchd(&["synth", "--sbs", "1", "--days", "1", "--out", path(&traces)]).status.code(), Some(0));
    let tasks = traces.join("day0_tasks.csv");
    let mut body = std::fs::read_to_string(&tasks).unwrap();
    body.push_str("0,not-a-slot,100\n");
    std::fs::write(&tasks, body).unwrap();
    let out = dispatchd(&["build-state", "--traces", path(&traces), "--out", path(&dir.path().join("states"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.contains("day0_tasks.csv:") && err.contains("not-a-slot"), "{err}");
}

#[test]
fn missing_state_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dispatchd(&["oracle", "--state", path(&dir.path().join("nope.csv")), "--out", path(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn probe_prints_json() {
    let out = dispatchd(&["probe-convergence", "--agents", "3", "--samples", "20000", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let probe: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(probe["n_agents"], 3);
    assert_eq!(probe["theoretical"], 0.125);
}
