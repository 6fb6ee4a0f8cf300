//! Scenario description: plant, agents, communication graph, join/leave
//! schedule, solver settings and controller parameters. Loaded from JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentParams, AgentState, DEFAULT_GAMMA_CAP, DEFAULT_PHI_PERIOD};
use crate::bass::StaticGains;
use crate::consensus::{FlowParams, PiState, INFORMER};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::matlib::{self, Matrix, Vector};
use crate::plant::{self, Channel, PlantModel};

/// How the stiff observer coupling `γᵢΣαᵢⱼ(x̂ⱼ − x̂ᵢ)` is integrated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Inside the RK4 stages like every other term.
    Explicit,
    /// Strang splitting: exact half-steps of the coupling around an RK4 step
    /// of the remaining dynamics.
    #[default]
    Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(rename = "T_end")]
    pub t_end: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub coupling: CouplingMode,
}

fn default_h() -> f64 {
    1e-3
}

fn default_record_every() -> usize {
    10
}

impl SolverConfig {
    pub fn new(h: f64, t_end: f64) -> Self {
        SolverConfig {
            h,
            t_end,
            record_every: default_record_every(),
            coupling: CouplingMode::Split,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.h).round() as usize
    }

    /// Step index an event at time `t` is applied before.
    pub fn snap(&self, t: f64) -> usize {
        (t / self.h).round() as usize
    }
}

/// Controller parameters as they appear in scenario files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    pub beta: f64,
    pub k_c: f64,
    pub gamma_c: f64,
    pub k_o: f64,
    pub gamma_o: f64,
    pub k_s: f64,
    pub gamma_s: f64,
    #[serde(rename = "T_phi")]
    pub t_phi: f64,
    pub gamma_cap: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            beta: 0.25,
            k_c: 1.0,
            gamma_c: 1.0,
            k_o: 1.0,
            gamma_o: 1.0,
            k_s: 1.0,
            gamma_s: 1.0,
            t_phi: DEFAULT_PHI_PERIOD,
            gamma_cap: DEFAULT_GAMMA_CAP,
        }
    }
}

impl ScenarioParams {
    pub fn agent_params(&self) -> AgentParams {
        AgentParams {
            beta: self.beta,
            bass: FlowParams {
                k: self.k_c,
                gamma: self.gamma_c,
            },
            dual: FlowParams {
                k: self.k_o,
                gamma: self.gamma_o,
            },
            size: FlowParams {
                k: self.k_s,
                gamma: self.gamma_s,
            },
            phi_period: self.t_phi,
            gamma_cap: self.gamma_cap,
        }
    }
}

/// Controller used by every agent in a scenario.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioMode {
    #[default]
    Algorithm1,
    /// Fixed gains on the normalized channels. Missing gains default to the
    /// Bass design for the initial agents and a missing `gamma` to 1.01 times
    /// the certified threshold.
    StaticGains {
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default)]
        gains: Option<StaticGains>,
    },
    StateFeedback,
}

/// Optional initial values of an agent's states; omitted parts are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialAgentState {
    pub xhat: Option<Vec<f64>>,
    #[serde(rename = "X", with = "matlib::opt_rows", skip_serializing_if = "Option::is_none")]
    pub x: Option<Matrix>,
    #[serde(rename = "Z", with = "matlib::opt_rows", skip_serializing_if = "Option::is_none")]
    pub z: Option<Matrix>,
    #[serde(rename = "Y", with = "matlib::opt_rows", skip_serializing_if = "Option::is_none")]
    pub y: Option<Matrix>,
    #[serde(rename = "W", with = "matlib::opt_rows", skip_serializing_if = "Option::is_none")]
    pub w: Option<Matrix>,
    pub zeta: Option<f64>,
    pub psi: Option<f64>,
}

impl InitialAgentState {
    pub fn from_state(s: &AgentState) -> Self {
        InitialAgentState {
            xhat: Some(s.xhat.iter().copied().collect()),
            x: Some(s.bass.estimate.clone()),
            z: Some(s.bass.integral.clone()),
            y: Some(s.dual.estimate.clone()),
            w: Some(s.dual.integral.clone()),
            zeta: Some(s.size.estimate),
            psi: Some(s.size.integral),
        }
    }

    pub fn build(&self, n: usize, field: &str) -> Result<AgentState> {
        let mut s = AgentState::zeros(n);
        if let Some(v) = &self.xhat {
            if v.len() != n {
                return Err(Error::config(format!("{field}.xhat"), format!("expected {n} entries")));
            }
            s.xhat = Vector::from_row_slice(v);
        }
        let mat = |m: &Option<Matrix>, name: &str| -> Result<Option<Matrix>> {
            match m {
                Some(m) if m.shape() != (n, n) => {
                    Err(Error::config(format!("{field}.{name}"), format!("expected {n}×{n}")))
                }
                other => Ok(other.clone()),
            }
        };
        if let Some(m) = mat(&self.x, "X")? {
            s.bass.estimate = m;
        }
        if let Some(m) = mat(&self.z, "Z")? {
            s.bass.integral = m;
        }
        if let Some(m) = mat(&self.y, "Y")? {
            s.dual.estimate = m;
        }
        if let Some(m) = mat(&self.w, "W")? {
            s.dual.integral = m;
        }
        s.size = PiState::new(self.psi.unwrap_or(0.0), self.zeta.unwrap_or(0.0));
        if !s.is_finite() {
            return Err(Error::config(field, "non-finite initial value"));
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Join,
    Leave,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphEdits {
    pub add: Vec<(NodeId, NodeId)>,
    pub remove: Vec<(NodeId, NodeId)>,
}

/// A join or leave. Edges touching node 0 attach agents to the informer. A
/// leaving agent's edges are dropped automatically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub agent_id: NodeId,
    /// Channel of a joining agent when the plant does not list it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<Channel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialAgentState>,
    #[serde(default)]
    pub graph_edits: GraphEdits,
}

/// Which state entries are positions relative to a target, for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionReport {
    pub indices: Vec<usize>,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub plant: PlantModel,
    pub x0: Vec<f64>,
    /// Initially active agents.
    pub agents: Vec<NodeId>,
    /// Communication graph among the initial agents.
    pub graph: Graph,
    /// Initial agents attached to the informer.
    #[serde(default)]
    pub informer_edges: Vec<NodeId>,
    #[serde(default)]
    pub initial_states: BTreeMap<NodeId, InitialAgentState>,
    #[serde(default)]
    pub events: Vec<Event>,
    pub solver: SolverConfig,
    #[serde(default)]
    pub params: ScenarioParams,
    #[serde(default)]
    pub controller_mode: ScenarioMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<PositionReport>,
}

/// A stretch of time with a fixed agent set and graph.
#[derive(Clone, Debug)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub start_step: usize,
    pub end_step: usize,
    pub agents: BTreeSet<NodeId>,
    /// Agents plus informer node 0 (when attached).
    pub graph: Graph,
}

impl Interval {
    pub fn agent_graph(&self) -> Graph {
        self.graph.induced(&self.agents)
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Channel of `id`, from the plant or from the join event that brings it in.
    pub fn channel(&self, id: NodeId) -> Result<Channel> {
        if let Ok(c) = self.plant.channel(id) {
            return Ok(c.clone());
        }
        self.events
            .iter()
            .find_map(|e| (e.kind == EventKind::Join && e.agent_id == id).then(|| e.channel.clone()).flatten())
            .ok_or(Error::UnknownId(id))
    }

    /// The plant extended by the channels that only appear in join events.
    pub fn full_plant(&self) -> Result<PlantModel> {
        let mut p = self.plant.clone();
        for e in &self.events {
            if let (EventKind::Join, Some(c)) = (e.kind, &e.channel) {
                if !p.channels.contains_key(&c.id) {
                    p.add_channel(c.clone())?;
                }
            }
        }
        Ok(p)
    }

    /// Every agent id that is active at some point, sorted.
    pub fn all_agents(&self) -> Vec<NodeId> {
        let mut ids: BTreeSet<NodeId> = self.agents.iter().copied().collect();
        ids.extend(self.events.iter().map(|e| e.agent_id));
        ids.into_iter().collect()
    }

    fn initial_graph(&self) -> Result<Graph> {
        let mut g = self.graph.clone();
        for &id in &self.agents {
            g.add_node(id);
        }
        for &id in &self.informer_edges {
            g.add_node(INFORMER);
            g.add_edge(INFORMER, id)
                .map_err(|e| Error::config("informer_edges", e.to_string()))?;
        }
        Ok(g)
    }

    /// The agent set and graph between consecutive events. Fails on an
    /// inconsistent schedule; does not check connectivity.
    pub fn intervals(&self) -> Result<Vec<Interval>> {
        let steps = self.solver.steps();
        let mut out = Vec::new();
        let mut agents: BTreeSet<NodeId> = self.agents.iter().copied().collect();
        let mut g = self.initial_graph()?;
        let mut start_step = 0;
        for (k, e) in self.events.iter().enumerate() {
            let field = format!("events[{k}]");
            let step = self.solver.snap(e.time);
            if step > start_step {
                out.push(self.interval(start_step, step, &agents, &g));
                start_step = step;
            }
            match e.kind {
                EventKind::Join => {
                    if e.agent_id == INFORMER {
                        return Err(Error::config(format!("{field}.agent_id"), "id 0 is the informer"));
                    }
                    if !agents.insert(e.agent_id) {
                        return Err(Error::config(format!("{field}.agent_id"), format!("agent {} is already active", e.agent_id)));
                    }
                    g.add_node(e.agent_id);
                }
                EventKind::Leave => {
                    if !agents.remove(&e.agent_id) {
                        return Err(Error::config(format!("{field}.agent_id"), format!("agent {} is not active", e.agent_id)));
                    }
                    g.remove_node(e.agent_id);
                }
            }
            for &(i, j) in &e.graph_edits.remove {
                if !g.remove_edge(i, j) {
                    return Err(Error::config(format!("{field}.graph_edits.remove"), format!("no edge ({i}, {j})")));
                }
            }
            for &(i, j) in &e.graph_edits.add {
                for v in [i, j] {
                    if v != INFORMER && !agents.contains(&v) {
                        return Err(Error::config(format!("{field}.graph_edits.add"), format!("agent {v} is not active")));
                    }
                    g.add_node(v);
                }
                g.add_edge(i, j)
                    .map_err(|err| Error::config(format!("{field}.graph_edits.add"), err.to_string()))?;
            }
            if g.contains(INFORMER) && g.neighbors(INFORMER).is_empty() {
                g.remove_node(INFORMER);
            }
        }
        out.push(self.interval(start_step, steps, &agents, &g));
        Ok(out)
    }

    fn interval(&self, s0: usize, s1: usize, agents: &BTreeSet<NodeId>, g: &Graph) -> Interval {
        Interval {
            start: s0 as f64 * self.solver.h,
            end: s1 as f64 * self.solver.h,
            start_step: s0,
            end_step: s1,
            agents: agents.clone(),
            graph: g.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plant
            .validate()
            .map_err(|e| Error::config("plant", e.to_string()))?;
        let n = self.plant.n();
        if self.x0.len() != n {
            return Err(Error::config("x0", format!("expected {n} entries, got {}", self.x0.len())));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("x0", "non-finite entry"));
        }
        let sv = &self.solver;
        if !(sv.h > 0.0 && sv.h.is_finite()) {
            return Err(Error::config("solver.h", "must be positive"));
        }
        if !(sv.t_end > 0.0 && sv.t_end.is_finite()) {
            return Err(Error::config("solver.T_end", "must be positive"));
        }
        if sv.record_every == 0 {
            return Err(Error::config("solver.record_every", "must be at least 1"));
        }
        self.params.agent_params().validate()?;
        if self.agents.is_empty() {
            return Err(Error::config("agents", "at least one initial agent is required"));
        }
        let initial: BTreeSet<NodeId> = self.agents.iter().copied().collect();
        if initial.len() != self.agents.len() {
            return Err(Error::config("agents", "duplicate id"));
        }
        if initial.contains(&INFORMER) {
            return Err(Error::config("agents", "id 0 is reserved for the informer"));
        }
        if self.graph.node_ids().iter().any(|id| !initial.contains(id)) {
            return Err(Error::config("graph", "graph nodes must be initial agents"));
        }
        if let Some(id) = self.informer_edges.iter().find(|id| !initial.contains(id)) {
            return Err(Error::config("informer_edges", format!("agent {id} is not an initial agent")));
        }
        for (id, st) in &self.initial_states {
            if !initial.contains(id) {
                return Err(Error::config(format!("initial_states.{id}"), "not an initial agent"));
            }
            st.build(n, &format!("initial_states.{id}"))?;
        }
        for (k, e) in self.events.iter().enumerate() {
            let field = format!("events[{k}]");
            if !(e.time > 0.0 && e.time < sv.t_end) {
                return Err(Error::config(format!("{field}.time"), "must lie strictly inside (0, T_end)"));
            }
            if k > 0 && e.time < self.events[k - 1].time {
                return Err(Error::config(format!("{field}.time"), "events must be sorted by time"));
            }
            if e.kind == EventKind::Join {
                let c = self.channel(e.agent_id).map_err(|_| {
                    Error::config(format!("{field}.channel"), format!("no channel for agent {}", e.agent_id))
                })?;
                if c.id != e.agent_id {
                    return Err(Error::config(format!("{field}.channel.id"), "must equal agent_id"));
                }
                if let Some(st) = &e.initial_state {
                    st.build(n, &format!("{field}.initial_state"))?;
                }
            }
        }
        let full = self.full_plant().map_err(|e| Error::config("events", e.to_string()))?;
        for &id in &self.agents {
            full.channel(id)
                .map_err(|_| Error::config("agents", format!("no channel for agent {id}")))?;
        }
        let needs_informer = matches!(self.controller_mode, ScenarioMode::Algorithm1);
        let norm = full.normalized();
        for (k, iv) in self.intervals()?.iter().enumerate() {
            let field = if k == 0 { "graph".to_string() } else { format!("events (interval {k})") };
            if !iv.agent_graph().is_connected() {
                return Err(Error::config(field, format!("agent graph is disconnected after t = {}", iv.start)));
            }
            if needs_informer && !(iv.graph.contains(INFORMER) && iv.graph.is_connected()) {
                return Err(Error::config(field, format!("no agent is attached to the informer after t = {}", iv.start)));
            }
            let (b, c) = norm.aggregate(&iv.agents)?;
            if !plant::is_controllable(&norm.a, &b) || !plant::is_observable(&norm.a, &c) {
                return Err(Error::config(
                    field,
                    format!("active channels {:?} are not jointly controllable and observable", iv.agents),
                ));
            }
        }
        if let ScenarioMode::StaticGains { gamma, gains } = &self.controller_mode {
            if !self.events.is_empty() {
                return Err(Error::config("controller_mode", "static gains need a fixed agent set (no events)"));
            }
            if let Some(g) = gamma {
                if !(*g >= 0.0 && g.is_finite()) {
                    return Err(Error::config("controller_mode.gamma", "must be nonnegative"));
                }
            }
            if let Some(gs) = gains {
                let ids: BTreeSet<NodeId> = gs.f.keys().copied().collect();
                let lids: BTreeSet<NodeId> = gs.l.keys().copied().collect();
                if ids != initial || lids != initial {
                    return Err(Error::config("controller_mode.gains", "need F and L for exactly the agents"));
                }
            }
        }
        if let Some(pr) = &self.position {
            if pr.indices.len() != pr.target.len() || pr.indices.iter().any(|&i| i >= n) {
                return Err(Error::config("position", "indices and target must match and lie within the state"));
            }
        }
        Ok(())
    }
}

/// Settings for the planar load transport example.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadTransportConfig {
    pub mass: f64,
    /// Rotation of the nonagon.
    pub theta0: f64,
    pub target: [f64; 2],
    pub p0: [f64; 2],
    pub v0: [f64; 2],
    /// Nonagon edges (0..9) occupied at the start.
    pub initial_edges: Vec<usize>,
    pub leave_edges: Vec<usize>,
    pub leave_time: f64,
    pub join_edges: Vec<usize>,
    pub join_time: f64,
    pub solver: SolverConfig,
    pub params: ScenarioParams,
}

impl Default for LoadTransportConfig {
    fn default() -> Self {
        LoadTransportConfig {
            mass: 1.0,
            theta0: 0.0,
            target: [100.0, 150.0],
            p0: [0.0, 0.0],
            v0: [0.0, 0.0],
            initial_edges: vec![0, 3, 6],
            leave_edges: vec![3],
            leave_time: 15.0,
            join_edges: vec![1, 4, 7],
            join_time: 30.0,
            solver: SolverConfig {
                h: 1e-3,
                t_end: 60.0,
                record_every: 10,
                coupling: CouplingMode::Split,
            },
            params: ScenarioParams::default(),
        }
    }
}

/// Agent id of the robot on nonagon edge `k`.
pub fn edge_agent(k: usize) -> NodeId {
    k as NodeId + 1
}

/// Outward normal angle of nonagon edge `k`.
pub fn edge_angle(k: usize, theta0: f64) -> f64 {
    2.0 * PI * k as f64 / 9.0 + theta0
}

fn ring_on(edges: &BTreeSet<usize>) -> Graph {
    let ids: Vec<NodeId> = edges.iter().map(|&k| edge_agent(k)).collect();
    Graph::ring(&ids)
}

/// The three-phase load transport scenario: agents on `initial_edges`, those
/// on `leave_edges` leave, those on `join_edges` join. Agents form a ring in
/// edge order and all of them talk to the informer on the load.
pub fn build_load_transport_scenario(cfg: &LoadTransportConfig) -> Result<Scenario> {
    let mut seen = BTreeSet::new();
    for &k in cfg.initial_edges.iter().chain(&cfg.join_edges) {
        if k >= 9 {
            return Err(Error::config("edges", format!("edge {k} is not a nonagon edge")));
        }
        if !seen.insert(k) {
            return Err(Error::config("edges", format!("edge {k} is assigned twice")));
        }
    }
    let mut current: BTreeSet<usize> = cfg.initial_edges.iter().copied().collect();
    for &k in &cfg.leave_edges {
        if !current.contains(&k) {
            return Err(Error::config("leave_edges", format!("edge {k} is not occupied initially")));
        }
    }
    for count in [
        current.len(),
        current.len() - cfg.leave_edges.len(),
        current.len() - cfg.leave_edges.len() + cfg.join_edges.len(),
    ] {
        if !(2..=9).contains(&count) {
            return Err(Error::config("edges", format!("agent count {count} is outside 2..=9")));
        }
    }
    let angles: Vec<(NodeId, f64)> = seen
        .iter()
        .map(|&k| (edge_agent(k), edge_angle(k, cfg.theta0)))
        .collect();
    let plant = plant::load::plant(&angles, cfg.mass)?;

    let mut events = Vec::new();
    let mut phase = |time: f64, kind: EventKind, edges: &[usize], current: &mut BTreeSet<usize>| {
        let before = ring_on(current);
        for &k in edges {
            match kind {
                EventKind::Join => current.insert(k),
                EventKind::Leave => current.remove(&k),
            };
        }
        let after = ring_on(current);
        for (idx, &k) in edges.iter().enumerate() {
            let id = edge_agent(k);
            let mut edits = GraphEdits::default();
            if idx + 1 == edges.len() {
                // the last event of a phase rewires the ring among the remaining agents
                for (i, j, _) in before.edges() {
                    let gone = [i, j].iter().any(|v| edges.iter().any(|&e| edge_agent(e) == *v));
                    let dropped_by_leave = kind == EventKind::Leave && gone;
                    if !after.has_edge(i, j) && !dropped_by_leave {
                        edits.remove.push((i, j));
                    }
                }
                for (i, j, _) in after.edges() {
                    if !before.has_edge(i, j) {
                        edits.add.push((i, j));
                    }
                }
            }
            if kind == EventKind::Join {
                edits.add.push((INFORMER, id));
            }
            events.push(Event {
                time,
                kind,
                agent_id: id,
                channel: None,
                initial_state: None,
                graph_edits: edits,
            });
        }
    };
    phase(cfg.leave_time, EventKind::Leave, &cfg.leave_edges, &mut current);
    phase(cfg.join_time, EventKind::Join, &cfg.join_edges, &mut current);
    events.retain(|e| e.time < cfg.solver.t_end);

    let initial: BTreeSet<usize> = cfg.initial_edges.iter().copied().collect();
    let agents: Vec<NodeId> = initial.iter().map(|&k| edge_agent(k)).collect();
    let s = Scenario {
        name: "load_transport".into(),
        plant,
        x0: vec![
            cfg.p0[0] - cfg.target[0],
            cfg.p0[1] - cfg.target[1],
            cfg.v0[0],
            cfg.v0[1],
        ],
        graph: ring_on(&initial),
        informer_edges: agents.clone(),
        agents,
        initial_states: BTreeMap::new(),
        events,
        solver: cfg.solver.clone(),
        params: cfg.params,
        controller_mode: ScenarioMode::Algorithm1,
        position: Some(PositionReport {
            indices: vec![0, 1],
            target: cfg.target.to_vec(),
        }),
    };
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_load_transport() {
        let s = build_load_transport_scenario(&LoadTransportConfig::default()).unwrap();
        let iv = s.intervals().unwrap();
        assert_eq!(iv.len(), 3);
        let sizes: Vec<usize> = iv.iter().map(|i| i.agents.len()).collect();
        assert_eq!(sizes, vec![3, 2, 5]);
        assert_eq!(iv[1].start, 15.0);
        assert_eq!(iv[2].start, 30.0);
        for i in &iv {
            assert!(i.agent_graph().is_connected());
            assert!(i.graph.is_connected());
            assert_eq!(i.graph.neighbors(INFORMER).len(), i.agents.len());
        }
        // ring in edge order after the join: 1-2-5-7-8
        let g = iv[2].agent_graph();
        assert_eq!(g.edge_count(), 5);
        assert!(g.has_edge(1, 8) && g.has_edge(1, 2) && !g.has_edge(1, 7));
    }

    #[test]
    fn json_round_trip() {
        let s = build_load_transport_scenario(&LoadTransportConfig::default()).unwrap();
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back.events, s.events);
        assert_eq!(back.plant, s.plant);
        assert_eq!(back.solver, s.solver);
    }

    #[test]
    fn single_agent_not_controllable() {
        let p = plant::load::plant(&[(1, 0.4)], 1.0).unwrap();
        let (b, c) = p.aggregate_all().unwrap();
        assert!(!plant::is_controllable(&p.a, &b));
        assert!(plant::is_observable(&p.a, &c));
        let cfg = LoadTransportConfig {
            initial_edges: vec![0, 3],
            leave_edges: vec![3],
            ..Default::default()
        };
        assert!(build_load_transport_scenario(&cfg).is_err());
    }

    #[test]
    fn any_two_distinct_edges_suffice() {
        for a in 0..9 {
            for b in a + 1..9 {
                let p = plant::load::plant(&[(1, edge_angle(a, 0.1)), (2, edge_angle(b, 0.1))], 1.0).unwrap();
                let (bm, cm) = p.aggregate_all().unwrap();
                assert!(plant::is_controllable(&p.a, &bm) && plant::is_observable(&p.a, &cm));
            }
        }
    }

    #[test]
    fn duplicate_edges_rejected() {
        let cfg = LoadTransportConfig {
            join_edges: vec![1, 3],
            leave_edges: vec![],
            ..Default::default()
        };
        let e = build_load_transport_scenario(&cfg).unwrap_err();
        assert!(e.to_string().contains("edge 3"));
    }

    #[test]
    fn validation_names_fields() {
        let mut s = build_load_transport_scenario(&LoadTransportConfig::default()).unwrap();
        s.events[0].time = 70.0;
        assert!(s.validate().unwrap_err().to_string().contains("events[0].time"));

        let mut s = build_load_transport_scenario(&LoadTransportConfig::default()).unwrap();
        s.x0.pop();
        assert!(s.validate().unwrap_err().to_string().contains("x0"));

        let mut s = build_load_transport_scenario(&LoadTransportConfig::default()).unwrap();
        s.informer_edges.clear();
        assert!(s.validate().unwrap_err().to_string().contains("informer"));

        // channel 1 alone cannot move the velocity
        let p = PlantModel::with_channels(
            nalgebra::dmatrix![0.0, 1.0; 0.0, 0.0],
            [
                Channel::new(1, nalgebra::dmatrix![1.0; 0.0], nalgebra::dmatrix![1.0, 0.0]),
                Channel::new(2, nalgebra::dmatrix![0.0; 1.0], nalgebra::dmatrix![1.0, 0.0]),
            ],
        )
        .unwrap();
        let s = Scenario {
            name: String::new(),
            plant: p,
            x0: vec![1.0, 0.0],
            agents: vec![1, 2],
            graph: Graph::path(&[1, 2]),
            informer_edges: vec![1],
            initial_states: BTreeMap::new(),
            events: vec![Event {
                time: 1.0,
                kind: EventKind::Leave,
                agent_id: 2,
                channel: None,
                initial_state: None,
                graph_edits: GraphEdits::default(),
            }],
            solver: SolverConfig::new(1e-3, 2.0),
            params: ScenarioParams::default(),
            controller_mode: ScenarioMode::Algorithm1,
            position: None,
        };
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("controllable") && msg.contains("interval 1"), "{msg}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let s = build_load_transport_scenario(&LoadTransportConfig::default()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        v["solver"]["step"] = 0.1.into();
        assert!(Scenario::from_json(&v.to_string()).is_err());
    }
}
