//! The nine-slot load transport run: three robots, one leaves at t = 15,
//! three join at t = 30. Writes trace.csv, events.csv and summary.json.

use std::path::PathBuf;

use plugplay::sim::{build_load_transport_scenario, run_scenario, LoadTransportConfig};

fn main() -> plugplay::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/load_transport"));
    let s = build_load_transport_scenario(&LoadTransportConfig::default())?;
    let trace = run_scenario(&s)?;
    trace.write_all(&out)?;
    let summary = trace.summary();
    for iv in &summary.intervals {
        let last = trace.window(iv.start, iv.end).last().expect("interval has samples");
        let zeta: Vec<String> = last.agents.iter().map(|(id, a)| format!("{id}:{:.3}", a.zeta)).collect();
        println!("[{:4.1}, {:4.1})  N = {}  zeta {}", iv.start, iv.end, iv.n_agents, zeta.join(" "));
    }
    println!(
        "|p - p_d|: {:.2} -> {:.4}",
        summary.position_error_initial.unwrap_or(f64::NAN),
        summary.position_error_final.unwrap_or(f64::NAN)
    );
    println!("written to {}", out.display());
    Ok(())
}
