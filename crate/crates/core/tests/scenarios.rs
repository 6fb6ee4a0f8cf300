//! Shipped scenario files and the file formats.

use std::path::Path;

use plugplay::sim::{build_load_transport_scenario, run_scenario, LoadTransportConfig, Scenario};

fn load(name: &str) -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)).unwrap()
}

#[test]
fn shipped_files_validate_and_round_trip() {
    for name in ["load_transport.json", "state_feedback.json", "static_gains.json"] {
        let s = load(name);
        let again = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s.to_json().unwrap(), again.to_json().unwrap(), "{name}");
    }
}

#[test]
fn shipped_load_transport_matches_builder() {
    let built = build_load_transport_scenario(&LoadTransportConfig::default()).unwrap();
    assert_eq!(load("load_transport.json").to_json().unwrap(), built.to_json().unwrap());
}

#[test]
fn unknown_fields_are_rejected() {
    let mut v: serde_json::Value = serde_json::from_str(&load("static_gains.json").to_json().unwrap()).unwrap();
    v["solver"]["tolerance"] = serde_json::json!(1e-3);
    let e = Scenario::from_json(&v.to_string()).unwrap_err();
    assert!(e.to_string().contains("tolerance"), "{e}");
}

#[test]
fn trace_columns_follow_agents_and_events() {
    let mut cfg = LoadTransportConfig::default();
    cfg.solver.t_end = 0.05;
    cfg.leave_time = 0.01;
    cfg.join_time = 0.03;
    let s = build_load_transport_scenario(&cfg).unwrap();
    let trace = run_scenario(&s).unwrap();
    let header = trace.header();
    assert_eq!(&header[..5], ["t", "x_1", "x_2", "x_3", "x_4"]);
    // six agents ever appear, each with n + 1 + m + 4 columns
    assert_eq!(header.len(), 5 + 6 * (4 + 1 + 1 + 4));
    assert!(header.contains(&"a4_err_X".to_string()));
    let csv = trace.to_csv_string().unwrap();
    let last = csv.lines().last().unwrap();
    // agent 4 has left: its fields are empty
    let idx = header.iter().position(|h| h == "a4_zeta").unwrap();
    assert_eq!(last.split(',').nth(idx), Some(""));
    let summary = trace.summary();
    assert_eq!(summary.events.len(), 4);
    assert_eq!(summary.intervals.iter().map(|i| i.n_agents).collect::<Vec<_>>(), [3, 2, 5]);
}
