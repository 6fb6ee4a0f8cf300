//! Recorded simulation output and its CSV/JSON forms.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::NodeId;
use crate::matlib::{self, Matrix, Vector};

use super::scenario::{EventKind, PositionReport, Scenario};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentSample {
    pub xhat: Vector,
    pub zeta: f64,
    /// Physical plant input.
    pub u: Vector,
    pub err_obs: f64,
    /// `‖Xᵢ − X*/N‖` against the current agent set.
    pub err_x: f64,
    pub err_y: f64,
    pub gamma: f64,
    pub x_est: Matrix,
    pub y_est: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vector,
    pub informer_zeta: Option<f64>,
    pub agents: BTreeMap<NodeId, AgentSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub kind: EventKind,
    pub agent_id: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub start: f64,
    pub end: f64,
    pub agents: Vec<NodeId>,
    pub n_agents: usize,
    #[serde(with = "matlib::rows")]
    pub x_star_over_n: Matrix,
    #[serde(with = "matlib::rows")]
    pub y_star_over_n: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub zeta: f64,
    pub err_obs: f64,
    #[serde(rename = "err_X")]
    pub err_x: f64,
    #[serde(rename = "err_Y")]
    pub err_y: f64,
    pub gamma: f64,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub t_end: f64,
    pub samples: usize,
    pub x_final: Vec<f64>,
    pub x_norm_initial: f64,
    pub x_norm_final: f64,
    /// `|p(T_end) − p^d|` and `|p(0) − p^d|` when the scenario names positions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_error_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_error_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_final: Option<Vec<f64>>,
    pub agents_final: BTreeMap<NodeId, AgentSummary>,
    pub intervals: Vec<IntervalReport>,
    pub events: Vec<EventRecord>,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub name: String,
    pub n: usize,
    /// Every agent that appears, with its input width.
    pub columns: BTreeMap<NodeId, usize>,
    pub position: Option<PositionReport>,
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    pub intervals: Vec<IntervalReport>,
}

impl Trace {
    pub fn new(n: usize, s: &Scenario) -> Self {
        let columns = s
            .all_agents()
            .into_iter()
            .map(|id| (id, s.channel(id).map(|c| c.inputs()).unwrap_or(0)))
            .collect();
        Trace {
            name: s.name.clone(),
            n,
            columns,
            position: s.position.clone(),
            samples: Vec::new(),
            events: Vec::new(),
            intervals: Vec::new(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=self.n).map(|k| format!("x_{k}")));
        for (&id, &m) in &self.columns {
            h.extend((1..=self.n).map(|k| format!("a{id}_xhat_{k}")));
            h.push(format!("a{id}_zeta"));
            h.extend((1..=m).map(|k| format!("a{id}_u_{k}")));
            for name in ["err_obs", "err_X", "err_Y", "gamma"] {
                h.push(format!("a{id}_{name}"));
            }
        }
        h
    }

    fn row(&self, s: &Sample) -> Vec<String> {
        let f = |v: f64| format!("{v:e}");
        let mut r = vec![f(s.t)];
        r.extend(s.x.iter().map(|&v| f(v)));
        for (id, &m) in &self.columns {
            let width = self.n + 1 + m + 4;
            match s.agents.get(id) {
                Some(a) => {
                    r.extend(a.xhat.iter().map(|&v| f(v)));
                    r.push(f(a.zeta));
                    r.extend(a.u.iter().map(|&v| f(v)));
                    r.extend([a.err_obs, a.err_x, a.err_y, a.gamma].map(f));
                }
                None => r.extend(std::iter::repeat_n(String::new(), width)),
            }
        }
        r
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for s in &self.samples {
            out.write_record(self.row(s))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8_lossy(&buf).into_owned())
    }

    pub fn write_events<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "kind", "agent_id"])?;
        for e in &self.events {
            let kind = match e.kind {
                EventKind::Join => "join",
                EventKind::Leave => "leave",
            };
            out.write_record([format!("{:e}", e.t), kind.into(), e.agent_id.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    fn position_error(&self, x: &Vector) -> Option<(f64, Vec<f64>)> {
        self.position.as_ref().map(|p| {
            let err: f64 = p.indices.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
            let pos = p.indices.iter().zip(&p.target).map(|(&i, t)| x[i] + t).collect();
            (err, pos)
        })
    }

    pub fn summary(&self) -> Summary {
        let first = self.samples.first();
        let last = self.samples.last();
        let x_final = last.map(|s| s.x.clone()).unwrap_or_else(|| Vector::zeros(self.n));
        let x_initial = first.map(|s| s.x.clone()).unwrap_or_else(|| Vector::zeros(self.n));
        let fin = self.position_error(&x_final);
        Summary {
            name: self.name.clone(),
            t_end: last.map_or(0.0, |s| s.t),
            samples: self.samples.len(),
            x_final: x_final.iter().copied().collect(),
            x_norm_initial: x_initial.norm(),
            x_norm_final: x_final.norm(),
            position_error_initial: self.position_error(&x_initial).map(|p| p.0),
            position_error_final: fin.as_ref().map(|p| p.0),
            position_final: fin.map(|p| p.1),
            agents_final: last
                .map(|s| {
                    s.agents
                        .iter()
                        .map(|(&id, a)| {
                            (
                                id,
                                AgentSummary {
                                    zeta: a.zeta,
                                    err_obs: a.err_obs,
                                    err_x: a.err_x,
                                    err_y: a.err_y,
                                    gamma: a.gamma,
                                },
                            )
                        })
                        .collect()
                })
                .unwrap_or_default(),
            intervals: self.intervals.clone(),
            events: self.events.clone(),
        }
    }

    /// Writes `trace.csv`, `events.csv` and `summary.json` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
        self.write_events(fs::File::create(dir.join("events.csv"))?)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary())?)?;
        Ok(())
    }

    /// Samples with `t` in `[from, to)`.
    pub fn window(&self, from: f64, to: f64) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.t >= from && s.t < to)
    }
}
