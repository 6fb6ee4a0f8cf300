//! Fixed-step simulation of the plant, the agents and the informer, with
//! join/leave events applied between steps.

use std::collections::{BTreeMap, BTreeSet};

use crate::agent::{AgentState, ControlAgent, ControllerMode, Neighborhood};
use crate::bass::{self, BassDesign};
use crate::consensus::{self, PiState, INFORMER};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::matlib::{self, Matrix, Vector};
use crate::plant::PlantModel;

use super::integrator::{coupling_propagator, rk4_step, OdeState};
use super::scenario::{CouplingMode, EventKind, Interval, Scenario, ScenarioMode};
use super::trace::{AgentSample, EventRecord, IntervalReport, Sample, Trace};

/// Everything that is integrated.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub x: Vector,
    pub agents: BTreeMap<NodeId, AgentState>,
    pub informer: PiState<f64>,
}

impl OdeState for SystemState {
    fn axpy(&mut self, s: f64, other: &Self) {
        self.x.axpy(s, &other.x, 1.0);
        for (id, a) in self.agents.iter_mut() {
            a.axpy(s, &other.agents[id]);
        }
        self.informer.axpy(s, &other.informer);
    }

    fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
            && self.agents.values().all(|a| a.is_finite())
            && self.informer.integral.is_finite()
            && self.informer.estimate.is_finite()
    }
}

/// Reference values `X*/N`, `Y*/N` for an agent set.
#[derive(Clone, Debug)]
pub struct References {
    pub agents: BTreeSet<NodeId>,
    pub x_over_n: Matrix,
    pub y_over_n: Matrix,
    pub design: BassDesign,
}

impl References {
    pub fn new(normalized: &PlantModel, agents: &BTreeSet<NodeId>, beta: f64) -> Result<Self> {
        let design = bass::bass_design(normalized, agents, beta)?;
        let nf = agents.len() as f64;
        Ok(References {
            agents: agents.clone(),
            x_over_n: &design.primal.x_star / nf,
            y_over_n: &design.dual.y_star / nf,
            design,
        })
    }
}

pub struct Simulation {
    scenario: Scenario,
    plant: PlantModel,
    pub agents: BTreeMap<NodeId, ControlAgent>,
    pub informer: PiState<f64>,
    /// Agents plus node 0 when the informer is attached.
    pub graph: Graph,
    pub x: Vector,
    step: usize,
    next_event: usize,
    references: References,
    static_gamma: Option<f64>,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let plant = scenario.full_plant()?.normalized();
        let intervals = scenario.intervals()?;
        let initial = &intervals[0];
        let params = scenario.params.agent_params();
        let references = References::new(&plant, &initial.agents, params.beta)?;
        let (static_gains, static_gamma) = match &scenario.controller_mode {
            ScenarioMode::StaticGains { gamma, gains } => {
                let gains = gains.clone().unwrap_or_else(|| references.design.gains.clone());
                let gamma = match gamma {
                    Some(g) => *g,
                    None => {
                        let cert = bass::bass_threshold(&plant, &references.design, &initial.agent_graph())?;
                        if cert.gamma_min > 0.0 {
                            1.01 * cert.gamma_min
                        } else {
                            1.0
                        }
                    }
                };
                (Some(gains), Some(gamma))
            }
            _ => (None, None),
        };
        let mut sim = Simulation {
            plant,
            agents: BTreeMap::new(),
            informer: PiState::<f64>::zeros(),
            graph: initial.graph.clone(),
            x: Vector::from_row_slice(&scenario.x0),
            step: 0,
            next_event: 0,
            references,
            static_gamma,
            scenario: scenario.clone(),
        };
        let n_agents = initial.agents.len();
        for &id in &initial.agents {
            let init = match scenario.initial_states.get(&id) {
                Some(s) => Some(s.build(sim.plant.n(), &format!("initial_states.{id}"))?),
                None => None,
            };
            let mode = match (&scenario.controller_mode, &static_gains) {
                (ScenarioMode::StaticGains { .. }, Some(g)) => ControllerMode::StaticGains {
                    f: g.f[&id].clone(),
                    l: g.l[&id].clone(),
                    agents: n_agents,
                    gamma: sim.static_gamma.unwrap_or(1.0),
                },
                _ => sim.agent_mode(),
            };
            sim.insert_agent(id, mode, init)?;
        }
        Ok(sim)
    }

    fn agent_mode(&self) -> ControllerMode {
        match self.scenario.controller_mode {
            ScenarioMode::StateFeedback => ControllerMode::StateFeedback,
            _ => ControllerMode::Algorithm1,
        }
    }

    fn insert_agent(&mut self, id: NodeId, mode: ControllerMode, init: Option<AgentState>) -> Result<()> {
        let ch = self.plant.channel(id)?.clone();
        let agent = ControlAgent::new(self.plant.a.clone(), &ch, self.scenario.params.agent_params(), mode, init)?;
        self.agents.insert(id, agent);
        Ok(())
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// The normalized plant including every channel in the schedule.
    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.scenario.solver.h
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn references(&self) -> &References {
        &self.references
    }

    pub fn active(&self) -> BTreeSet<NodeId> {
        self.agents.keys().copied().collect()
    }

    pub fn agent_graph(&self) -> Graph {
        self.graph.induced(&self.active())
    }

    pub fn state(&self) -> SystemState {
        SystemState {
            x: self.x.clone(),
            agents: self.agents.iter().map(|(&id, a)| (id, a.state.clone())).collect(),
            informer: self.informer.clone(),
        }
    }

    fn set_state(&mut self, s: SystemState) {
        self.x = s.x;
        for (id, st) in s.agents {
            if let Some(a) = self.agents.get_mut(&id) {
                a.state = st;
            }
        }
        self.informer = s.informer;
    }

    /// Applies the events scheduled at the current step. Returns what happened.
    pub fn apply_due_events(&mut self) -> Result<Vec<EventRecord>> {
        let mut done = Vec::new();
        while let Some(e) = self.scenario.events.get(self.next_event) {
            if self.scenario.solver.snap(e.time) != self.step {
                break;
            }
            let e = e.clone();
            self.next_event += 1;
            match e.kind {
                EventKind::Join => {
                    let init = match &e.initial_state {
                        Some(s) => Some(s.build(self.plant.n(), "initial_state")?),
                        None => None,
                    };
                    self.insert_agent(e.agent_id, self.agent_mode(), init)?;
                    self.graph.add_node(e.agent_id);
                }
                EventKind::Leave => {
                    self.agents.remove(&e.agent_id);
                    self.graph.remove_node(e.agent_id);
                }
            }
            for &(i, j) in &e.graph_edits.remove {
                self.graph.remove_edge(i, j);
            }
            for &(i, j) in &e.graph_edits.add {
                self.graph.add_node(i);
                self.graph.add_node(j);
                self.graph.add_edge(i, j)?;
            }
            if self.graph.contains(INFORMER) && self.graph.neighbors(INFORMER).is_empty() {
                self.graph.remove_node(INFORMER);
            }
            done.push(EventRecord {
                t: self.time(),
                kind: e.kind,
                agent_id: e.agent_id,
            });
        }
        if !done.is_empty() {
            if !self.agent_graph().is_connected() {
                return Err(Error::Disconnected);
            }
            let active = self.active();
            self.references = References::new(&self.plant, &active, self.scenario.params.beta)?;
        }
        Ok(done)
    }

    fn neighborhood<'a>(&self, id: NodeId, s: &'a SystemState) -> Neighborhood<'a> {
        let mut nb = Neighborhood::default();
        for (j, w) in self.graph.neighbors(id) {
            if j == INFORMER {
                nb.informer = Some((&s.informer, w));
            } else {
                nb.agents.push((&s.agents[&j], w));
            }
        }
        nb
    }

    /// Right-hand side of the whole system with coupling gains held at `gammas`.
    pub fn derivative(&self, s: &SystemState, gammas: &BTreeMap<NodeId, f64>, observer_coupling: bool) -> Result<SystemState> {
        let mut dx = &self.plant.a * &s.x;
        let mut agents = BTreeMap::new();
        for (&id, agent) in &self.agents {
            let st = &s.agents[&id];
            let u = agent.output(st, &s.x)?;
            dx += &agent.channel.input * u;
            let y = agent.measure(&s.x);
            let nb = self.neighborhood(id, s);
            agents.insert(id, agent.derivative(st, &y, &nb, gammas[&id], observer_coupling)?);
        }
        let mut informer = PiState::<f64>::zeros();
        if self.graph.contains(INFORMER) {
            let nb: Vec<_> = self
                .graph
                .neighbors(INFORMER)
                .into_iter()
                .map(|(j, w)| (&s.agents[&j].size, w))
                .collect();
            let p = self.scenario.params;
            let drift = consensus::size_drift(INFORMER, s.informer.estimate, p.k_s);
            informer = consensus::pi_agent_derivative(&s.informer, &nb, drift, p.gamma_s);
        }
        Ok(SystemState { x: dx, agents, informer })
    }

    fn has_observers(&self) -> bool {
        !matches!(self.scenario.controller_mode, ScenarioMode::StateFeedback)
    }

    /// Exact flow of the observer coupling over `tau`.
    fn couple(&self, s: &mut SystemState, gammas: &BTreeMap<NodeId, f64>, tau: f64) -> Result<()> {
        if !self.has_observers() || s.agents.len() < 2 {
            return Ok(());
        }
        let g = self.agent_graph();
        let ids = g.node_ids();
        let gam: Vec<f64> = ids.iter().map(|id| gammas[id]).collect();
        let prop = coupling_propagator(&g.laplacian(), &gam, tau)?;
        let old: Vec<Vector> = ids.iter().map(|id| s.agents[id].xhat.clone()).collect();
        for (i, id) in ids.iter().enumerate() {
            let mut v = Vector::zeros(self.plant.n());
            for (j, xj) in old.iter().enumerate() {
                v.axpy(prop[(i, j)], xj, 1.0);
            }
            s.agents.get_mut(id).unwrap().xhat = v;
        }
        Ok(())
    }

    /// Samples the inverse filters and freezes the coupling gains for the next step.
    pub fn prepare_step(&mut self) -> BTreeMap<NodeId, f64> {
        let t = self.time();
        let mut gammas = BTreeMap::new();
        for (&id, a) in self.agents.iter_mut() {
            a.update_filters(t);
            gammas.insert(id, a.coupling_gain());
        }
        gammas
    }

    /// Advances one step of size `h` (events at the new time are not applied).
    pub fn advance(&mut self, gammas: &BTreeMap<NodeId, f64>) -> Result<()> {
        let h = self.scenario.solver.h;
        let t = self.time();
        let split = self.scenario.solver.coupling == CouplingMode::Split;
        let mut s = self.state();
        if split {
            self.couple(&mut s, gammas, h / 2.0)?;
        }
        let mut s = rk4_step(|_, st: &SystemState| self.derivative(st, gammas, !split), &s, t, h)?;
        if split {
            self.couple(&mut s, gammas, h / 2.0)?;
            if !s.is_finite() {
                return Err(Error::Integration {
                    t: t + h,
                    reason: "state became non-finite".into(),
                });
            }
        }
        self.set_state(s);
        self.step += 1;
        Ok(())
    }

    /// Snapshot for the trace at the current time.
    pub fn sample(&self, gammas: &BTreeMap<NodeId, f64>) -> Result<Sample> {
        let mut agents = BTreeMap::new();
        for (&id, a) in &self.agents {
            let st = &a.state;
            let u = a.output(st, &self.x)?;
            agents.insert(
                id,
                AgentSample {
                    xhat: st.xhat.clone(),
                    zeta: st.size.estimate,
                    u: a.to_plant_input(&u),
                    err_obs: (&st.xhat - &self.x).norm(),
                    err_x: matlib::induced_2norm(&(&st.bass.estimate - &self.references.x_over_n)),
                    err_y: matlib::induced_2norm(&(&st.dual.estimate - &self.references.y_over_n)),
                    gamma: gammas.get(&id).copied().unwrap_or(f64::NAN),
                    x_est: st.bass.estimate.clone(),
                    y_est: st.dual.estimate.clone(),
                },
            );
        }
        Ok(Sample {
            t: self.time(),
            x: self.x.clone(),
            informer_zeta: self.graph.contains(INFORMER).then_some(self.informer.estimate),
            agents,
        })
    }

    /// Runs to `T_end`, recording every `record_every` steps and at the end.
    pub fn run(mut self) -> Result<(Trace, Simulation)> {
        let total = self.scenario.solver.steps();
        let every = self.scenario.solver.record_every;
        let mut trace = Trace::new(self.plant.n(), &self.scenario);
        loop {
            let events = self.apply_due_events()?;
            trace.events.extend(events);
            let gammas = self.prepare_step();
            if self.step.is_multiple_of(every) || self.step == total {
                trace.samples.push(self.sample(&gammas)?);
            }
            if self.step >= total {
                break;
            }
            self.advance(&gammas)?;
        }
        trace.intervals = interval_reports(&self.scenario, &self.plant)?;
        Ok((trace, self))
    }

    /// Runs until the step index reaches `round(t/h)`, applying events on the way.
    pub fn run_until(&mut self, t: f64) -> Result<()> {
        let target = self.scenario.solver.snap(t).min(self.scenario.solver.steps());
        while self.step < target {
            self.apply_due_events()?;
            let gammas = self.prepare_step();
            self.advance(&gammas)?;
        }
        self.apply_due_events()?;
        self.prepare_step();
        Ok(())
    }
}

fn interval_reports(s: &Scenario, plant: &PlantModel) -> Result<Vec<IntervalReport>> {
    s.intervals()?
        .iter()
        .map(|iv: &Interval| {
            let r = References::new(plant, &iv.agents, s.params.beta)?;
            Ok(IntervalReport {
                start: iv.start,
                end: iv.end,
                agents: iv.agents.iter().copied().collect(),
                n_agents: iv.agents.len(),
                x_star_over_n: r.x_over_n,
                y_star_over_n: r.y_over_n,
            })
        })
        .collect()
}

/// Integrates a scenario from start to end.
pub fn run_scenario(s: &Scenario) -> Result<Trace> {
    Ok(Simulation::new(s)?.run()?.0)
}
