//! Two agents with full-state measurements stabilize a double integrator
//! using only their own Bass estimate.

use std::path::Path;

use plugplay::sim::{run_scenario, Scenario};

fn main() -> plugplay::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/state_feedback.json");
    let s = Scenario::load(&path)?;
    let trace = run_scenario(&s)?;
    for sample in trace.samples.iter().step_by(500) {
        println!("t = {:5.1}  |x| = {:.3e}", sample.t, sample.x.norm());
    }
    Ok(())
}
