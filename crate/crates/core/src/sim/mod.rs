//! Scenario runner: plant, agents and informer integrated together, with
//! agents joining and leaving on a schedule.

pub mod engine;
pub mod integrator;
pub mod scenario;
pub mod trace;

pub use engine::{run_scenario, References, Simulation, SystemState};
pub use integrator::{coupling_propagator, rk4_step, OdeState};
pub use scenario::{
    build_load_transport_scenario, CouplingMode, Event, EventKind, LoadTransportConfig, Scenario, ScenarioMode,
    ScenarioParams, SolverConfig,
};
pub use trace::{Sample, Summary, Trace};
