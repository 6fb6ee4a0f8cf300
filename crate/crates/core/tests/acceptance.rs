//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stdout so the summary survives output capture.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use plugplay::analysis;
use plugplay::bass::{self, StaticGains};
use plugplay::cli::DEFAULT_SEED;
use plugplay::graph::NodeId;
use plugplay::matlib::{self, Matrix};
use plugplay::sim::{
    build_load_transport_scenario, run_scenario, CouplingMode, LoadTransportConfig, Scenario, ScenarioMode, Simulation,
    SolverConfig,
};
use plugplay::verify::{self, CheckResult, Suite};
use plugplay::{Channel, Graph, PlantModel};

use nalgebra::dmatrix;

fn report(n: u32, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {status} ({detail})");
}

fn brief(c: &CheckResult) -> String {
    format!("{} {}/{} worst {:.3e} vs {}", c.name, c.passed, c.instances, c.worst, c.bound)
}

fn finish(n: u32, parts: &[(bool, String)]) {
    let pass = parts.iter().all(|p| p.0);
    let detail: Vec<&str> = parts.iter().map(|p| p.1.as_str()).collect();
    report(n, pass, &detail.join("; "));
    assert!(pass, "criterion {n} failed: {}", detail.join("; "));
}

fn timed(f: impl FnOnce() -> CheckResult) -> (CheckResult, f64) {
    let start = Instant::now();
    let c = f();
    (c, start.elapsed().as_secs_f64())
}

#[test]
fn criterion_01_bass_abscissa() {
    let (c, secs) = timed(|| verify::check_bass_abscissa(DEFAULT_SEED, 200));
    finish(
        1,
        &[(c.ok(), brief(&c)), (secs < 5.0, format!("{secs:.2} s"))],
    );
}

#[test]
fn criterion_02_decay_envelope() {
    let (c, secs) = timed(|| verify::check_decay_envelopes(DEFAULT_SEED, 50));
    finish(
        2,
        &[(c.ok(), brief(&c)), (secs < 10.0, format!("{secs:.2} s"))],
    );
}

#[test]
fn criterion_03_distributed_bass() {
    let checks = [
        verify::check_flow_convergence(DEFAULT_SEED, 25, false),
        verify::check_flow_rate(DEFAULT_SEED, 10, false),
        verify::check_flow_convergence(DEFAULT_SEED, 25, true),
        verify::check_flow_rate(DEFAULT_SEED, 10, true),
    ];
    let parts: Vec<_> = checks.iter().map(|c| (c.ok(), brief(c))).collect();
    finish(3, &parts);
}

#[test]
fn criterion_04_flow_equilibria() {
    let c = verify::check_bass_equilibria(DEFAULT_SEED, 25);
    finish(4, &[(c.ok(), brief(&c))]);
}

#[test]
fn criterion_05_network_size() {
    let checks = [
        verify::check_size_convergence(DEFAULT_SEED),
        verify::check_size_rate(DEFAULT_SEED),
        verify::check_size_equilibrium(DEFAULT_SEED),
    ];
    let parts: Vec<_> = checks.iter().map(|c| (c.ok(), brief(c))).collect();
    finish(5, &parts);
}

#[test]
fn criterion_06_coupling_threshold() {
    let checks = [
        verify::check_threshold(DEFAULT_SEED, 100),
        verify::check_block_bounds(DEFAULT_SEED, 100),
    ];
    let parts: Vec<_> = checks.iter().map(|c| (c.ok(), brief(c))).collect();
    finish(6, &parts);
}

/// Gains as the agents currently apply them.
fn converged_gains(sim: &Simulation) -> StaticGains {
    let mut g = StaticGains::default();
    for (&id, a) in &sim.agents {
        let gains = a.current_gains();
        g.f.insert(id, gains.f);
        g.l.insert(id, gains.l);
    }
    g
}

#[test]
fn criterion_07_limits_on_static_configuration() {
    let cfg = LoadTransportConfig {
        leave_edges: vec![],
        join_edges: vec![],
        ..Default::default()
    };
    let s = build_load_transport_scenario(&cfg).unwrap();
    let mut sim = Simulation::new(&s).unwrap();
    let design = sim.references().design.clone();
    let cert = bass::bass_threshold(sim.plant(), &design, &sim.agent_graph()).unwrap();
    let gamma_bound = cert.gamma_min_mohar();
    let (mut f_err, mut l_err, mut z_err, mut gamma_low) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    let mut t = 40.0;
    while t <= 60.0 + 1e-9 {
        sim.run_until(t).unwrap();
        for (id, a) in &sim.agents {
            let g = a.current_gains();
            f_err = f_err.max(matlib::induced_2norm(&(&g.f - &design.gains.f[id])));
            l_err = l_err.max(matlib::induced_2norm(&(&g.l - &design.gains.l[id])));
            z_err = z_err.max((a.state.size.estimate - 3.0).abs());
            gamma_low = gamma_low.min(a.coupling_gain());
        }
        t += 0.5;
    }
    finish(
        7,
        &[
            (f_err < 1e-4, format!("max |F_i + B_i'X*^-1| = {f_err:.2e}")),
            (l_err < 1e-4, format!("max |L_i + Y*^-1 C_i'| = {l_err:.2e}")),
            (z_err < 1e-4, format!("max |zeta_i - 3| = {z_err:.2e}")),
            (
                gamma_low >= gamma_bound,
                format!("min gamma_i = {gamma_low:.3e} vs bound {gamma_bound:.3e}"),
            ),
        ],
    );
}

#[test]
fn criterion_08_load_transport() {
    let start = Instant::now();
    let s = build_load_transport_scenario(&LoadTransportConfig::default()).unwrap();
    let (trace, sim) = Simulation::new(&s).unwrap().run().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut parts = Vec::new();

    // (a) and (b): the last sample of each interval
    for iv in &trace.intervals {
        let last = trace.window(iv.start, iv.end).last().unwrap();
        let n = iv.n_agents as f64;
        let z = last.agents.values().map(|a| (a.zeta - n).abs()).fold(0.0, f64::max);
        let ex = last.agents.values().map(|a| a.err_x).fold(0.0, f64::max);
        let ey = last.agents.values().map(|a| a.err_y).fold(0.0, f64::max);
        parts.push((z < 0.1, format!("[{:.0},{:.0}) zeta err {z:.3e}", iv.start, iv.end)));
        parts.push((ex < 1e-2 && ey < 1e-2, format!("X err {ex:.3e}, Y err {ey:.3e}")));
    }

    // (c)
    let summary = trace.summary();
    let (p0, p1) = (summary.position_error_initial.unwrap(), summary.position_error_final.unwrap());
    parts.push((p1 < 0.1 * p0, format!("|p-pd| {p0:.1} -> {p1:.3}")));
    let gains = converged_gains(&sim);
    let gamma = sim.agents.values().map(|a| a.coupling_gain()).fold(f64::INFINITY, f64::min);
    let active: BTreeSet<NodeId> = sim.active();
    let g = sim.agent_graph();
    let limit = bass::bass_design(sim.plant(), &active, s.params.beta).unwrap();
    let cert = bass::bass_threshold(sim.plant(), &limit, &g).unwrap();
    let cl = analysis::closed_loop_matrix(sim.plant(), &gains, cert.gamma_min * 1.01, &g).unwrap();
    let abscissa = matlib::spectral_abscissa(&cl.assembled).unwrap();
    parts.push((
        gamma >= cert.gamma_min && abscissa < 0.0,
        format!("gamma_i >= {:.3e}: {gamma:.3e}, abscissa {abscissa:.3e}", cert.gamma_min),
    ));
    parts.push((secs < 60.0, format!("{secs:.1} s")));
    finish(8, &parts);
}

fn double_integrator(mode: ScenarioMode, t_end: f64, c1: Matrix, c2: Matrix) -> Scenario {
    let plant = PlantModel::with_channels(
        dmatrix![0.0, 1.0; 0.0, 0.0],
        [Channel::new(1, dmatrix![0.0; 1.0], c1), Channel::new(2, dmatrix![0.0; 0.5], c2)],
    )
    .unwrap();
    Scenario {
        name: "double_integrator".into(),
        plant,
        x0: vec![1.0, -1.0],
        agents: vec![1, 2],
        graph: Graph::path(&[1, 2]),
        informer_edges: vec![1],
        initial_states: Default::default(),
        events: vec![],
        solver: SolverConfig::new(1e-3, t_end),
        params: Default::default(),
        controller_mode: mode,
        position: None,
    }
}

#[test]
fn criterion_09_state_feedback() {
    let full = Matrix::identity(2, 2);
    let s = double_integrator(ScenarioMode::StateFeedback, 30.0, full.clone(), full);
    let (trace, sim) = Simulation::new(&s).unwrap().run().unwrap();
    let x0 = trace.samples[0].x.norm();
    let x1 = trace.samples.last().unwrap().x.norm();
    let p = sim.plant();
    let mut acl: Matrix = p.a.clone();
    for (id, a) in &sim.agents {
        acl += &p.channel(*id).unwrap().input * a.current_gains().f;
    }
    let abscissa = matlib::spectral_abscissa(&acl).unwrap();
    finish(
        9,
        &[
            (x1 < 1e-3 * x0, format!("|x(30)|/|x(0)| = {:.2e}", x1 / x0)),
            (abscissa < 0.0, format!("limit abscissa {abscissa:.3}")),
        ],
    );
}

fn final_state(mut s: Scenario, h: f64) -> nalgebra::DVector<f64> {
    s.solver.h = h;
    s.solver.record_every = usize::MAX;
    run_scenario(&s).unwrap().samples.last().unwrap().x.clone()
}

#[test]
fn criterion_10_engineering() {
    let mut parts = Vec::new();

    let mut short = LoadTransportConfig::default();
    short.solver.t_end = 1.0;
    short.leave_time = 0.3;
    short.join_time = 0.6;
    let s = build_load_transport_scenario(&short).unwrap();
    let (a, b) = (run_scenario(&s).unwrap(), run_scenario(&s).unwrap());
    let same = a.to_csv_string().unwrap() == b.to_csv_string().unwrap();
    parts.push((same, "two runs bit-identical".to_string()));

    let mode = ScenarioMode::StaticGains { gamma: Some(5.0), gains: None };
    let mut smooth = double_integrator(mode, 1.0, dmatrix![1.0, 0.0], dmatrix![0.0, 2.0]);
    smooth.solver.coupling = CouplingMode::Explicit;
    let h = 0.02;
    let (x1, x2, x3) = (
        final_state(smooth.clone(), h),
        final_state(smooth.clone(), h / 2.0),
        final_state(smooth, h / 4.0),
    );
    let ratio = (&x1 - &x2).norm() / (&x2 - &x3).norm();
    parts.push(((ratio - 16.0).abs() <= 3.2, format!("RK4 ratio {ratio:.2}")));

    let start = Instant::now();
    let rep = verify::run_suite(Suite::All, DEFAULT_SEED);
    let secs = start.elapsed().as_secs_f64();
    parts.push((rep.ok() && secs < 180.0, format!("verify all ok={} in {secs:.1} s", rep.ok())));
    finish(10, &parts);
}
