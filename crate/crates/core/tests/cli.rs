//! The `plugplay` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn plugplay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plugplay"))
        .args(args)
        .env("PLUGPLAY_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn run_writes_three_files_and_honours_t_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("load_transport.json");
    let o = plugplay(&[
        "run",
        path.to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
        "--T-end",
        "5",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    for f in ["trace.csv", "events.csv", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!((summary["t_end"].as_f64().unwrap() - 5.0).abs() < 1e-9);
    assert!(summary["position_error_final"].as_f64().is_some());
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let last = trace.lines().last().unwrap();
    let t: f64 = last.split(',').next().unwrap().parse().unwrap();
    assert!((t - 5.0).abs() < 1e-9);
    // no events before t = 5
    let events = std::fs::read_to_string(dir.path().join("events.csv")).unwrap();
    assert_eq!(events.trim(), "t,kind,agent_id");
}

#[test]
fn missing_scenario_exits_two() {
    let o = plugplay(&["run", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("scenario not found"));
}

#[test]
fn invalid_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scenario("state_feedback.json")).unwrap()).unwrap();
    s["solver"]["h"] = serde_json::json!(-1.0);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, s.to_string()).unwrap();
    let o = plugplay(&["run", bad.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("solver.h"), "{}", text(&o));
}

#[test]
fn unknown_override_is_a_usage_error() {
    let path = scenario("state_feedback.json");
    let o = plugplay(&["run", path.to_str().unwrap(), "--set", "nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = plugplay(&["run", path.to_str().unwrap(), "--h", "abc"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_bass_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let o = plugplay(&["verify", "bass", "--seed", "7", "--json", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
        assert!(text(&o).contains("bass_abscissa"));
    }
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        for c in v["checks"].as_array_mut().unwrap() {
            c["seconds"] = serde_json::json!(0);
        }
        v
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn demo_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo.json");
    let o = plugplay(&["demo", "--export", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let exported = std::fs::read_to_string(&out).unwrap();
    let shipped = std::fs::read_to_string(scenario("load_transport.json")).unwrap();
    assert_eq!(exported, shipped);
}
