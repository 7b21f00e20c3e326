use std::path::Path;
use std::process::{Command, Output};

fn loopmac(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopmac"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("LOOPMAC_WEIGHTS")
        .env_remove("LOOPMAC_SCENARIO")
        .output()
        .expect("binary runs")
}

fn error_json(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().expect("an error line on stderr");
    serde_json::from_str(line).expect("error is JSON")
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = loopmac(&["central", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let e = error_json(&o);
    assert_eq!(e["kind"], "usage");
    assert_eq!(e["exit_code"], 2);
}

#[test]
fn window_past_the_day_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = loopmac(&["central", "--window", "280"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(error_json(&o)["message"].as_str().unwrap().contains("exceeds"));
}

#[test]
fn central_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = loopmac(&["central", "--window", "3", "--verify"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["mode"], "central");
    assert_eq!(rep["optimality"][0], 0.0);
}

#[test]
fn admm_echoes_rho_and_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let o = loopmac(&["admm", "--window", "5", "--iters", "4", "--rho", "0.002"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["rho"], 0.002);
    assert_eq!(rep["iters"], 4);
    let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("rho 0.002"));
}

#[test]
fn non_positive_rho_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = loopmac(&["admm", "--rho", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synthesized_scenario_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("scen");
    let o = loopmac(&["synth", "--seed", "9"], &scen);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let from_files = loopmac(&["central", "--window", "10", "--scenario", scen.to_str().unwrap()], &a);
    let from_seed = loopmac(&["central", "--window", "10", "--seed", "9"], &b);
    assert!(from_files.status.success(), "{}", String::from_utf8_lossy(&from_files.stderr));
    assert!(from_seed.status.success());
    let obj = |o: &Output| {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .find_map(|l| l.strip_prefix("objective ").map(|v| v.parse::<f64>().unwrap()))
            .unwrap()
    };
    let (x, y) = (obj(&from_files), obj(&from_seed));
    assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0), "{x} vs {y}");
}

#[test]
fn loopmac_without_weights_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = loopmac(&["loopmac", "--window", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let missing = dir.path().join("nowhere");
    let o = loopmac(&["bench", "--limit", "1", "--weights", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["kind"], "weights_missing");
}

#[test]
fn missing_scenario_directory_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = loopmac(&["central", "--scenario", "/definitely/not/here"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["exit_code"], 2);
}

#[test]
fn report_rebuilds_curves_from_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(loopmac(&["admm", "--window", "2", "--iters", "3"], &run).status.success());
    let rep = dir.path().join("rep");
    let log = run.join("trajectory.csv");
    let o = loopmac(&["report", "--log", log.to_str().unwrap()], &rep);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(rep.join("curves.csv")).unwrap(),
        std::fs::read_to_string(run.join("curves.csv")).unwrap()
    );
}
