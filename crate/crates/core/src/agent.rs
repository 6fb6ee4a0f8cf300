//! The self-organizing control agent: distributed observer, time-varying gains
//! built from the consensus flows, and the sample-and-hold inverse filter.

use serde::{Deserialize, Serialize};

use crate::consensus::{self, FlowParams, PiState};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::matlib::{self, Matrix, Vector};
use crate::plant::Channel;

/// Default sampling period of the inverse filter.
pub const DEFAULT_PHI_PERIOD: f64 = 0.1;
/// Coupling gain used while `κᵢ` is undefined.
pub const DEFAULT_GAMMA_CAP: f64 = 1e6;
/// A sample `X` is inverted only if `σ_min(X) > PHI_SING_RTOL · max(1, σ_max(X))`.
pub const PHI_SING_RTOL: f64 = 1e-10;

/// Sample-and-hold inverse: holds `X(kT)⁻¹` on `[kT, (k+1)T)`, or the previous
/// value when `X(kT)` is numerically singular. Starts from the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiFilter {
    pub period: f64,
    #[serde(with = "matlib::rows")]
    held: Matrix,
    last_sample: Option<i64>,
}

impl PhiFilter {
    pub fn new(n: usize, period: f64) -> Self {
        PhiFilter {
            period,
            held: matlib::identity(n),
            last_sample: None,
        }
    }

    pub fn sample_index(&self, t: f64) -> i64 {
        // tolerate round-off in t = step·h
        (t / self.period + 1e-6).floor() as i64
    }

    /// Advances the filter to time `t`, sampling `x` if a new period started.
    pub fn update(&mut self, x: &Matrix, t: f64) -> &Matrix {
        let k = self.sample_index(t);
        if self.last_sample != Some(k) {
            self.last_sample = Some(k);
            let sv = matlib::singular_values(x);
            let (smax, smin) = (sv[0], sv[sv.len() - 1]);
            if smin > PHI_SING_RTOL * smax.max(1.0) {
                if let Ok(inv) = matlib::inverse(x) {
                    if matlib::is_finite(&inv) {
                        self.held = inv;
                    }
                }
            }
        }
        &self.held
    }

    pub fn value(&self) -> &Matrix {
        &self.held
    }

    pub fn last_sample(&self) -> Option<i64> {
        self.last_sample
    }
}

/// Parameters every agent carries. Identical for all agents in a scenario but
/// nothing requires that.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub beta: f64,
    pub bass: FlowParams,
    pub dual: FlowParams,
    pub size: FlowParams,
    pub phi_period: f64,
    pub gamma_cap: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams {
            beta: 0.25,
            bass: FlowParams::default(),
            dual: FlowParams::default(),
            size: FlowParams::default(),
            phi_period: DEFAULT_PHI_PERIOD,
            gamma_cap: DEFAULT_GAMMA_CAP,
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::config("params.beta", "must be positive"));
        }
        for (name, p) in [("bass", self.bass), ("dual", self.dual), ("size", self.size)] {
            p.validate()
                .map_err(|e| Error::config(format!("params.{name}"), e.to_string()))?;
        }
        if !(self.phi_period > 0.0) {
            return Err(Error::config("params.T_phi", "must be positive"));
        }
        if !(self.gamma_cap >= 1.0) {
            return Err(Error::config("params.gamma_cap", "must be at least 1"));
        }
        Ok(())
    }
}

/// How an agent computes its gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerMode {
    /// Gains from the consensus flows and the size estimate.
    Algorithm1,
    /// Fixed `Fᵢ`, `Lᵢ`, agent count and coupling gain.
    StaticGains {
        #[serde(rename = "F", with = "matlib::rows")]
        f: Matrix,
        #[serde(rename = "L", with = "matlib::rows")]
        l: Matrix,
        agents: usize,
        gamma: f64,
    },
    /// `uᵢ = −BᵢᵀΦ(Xᵢ)x` from the full plant state; no observer.
    StateFeedback,
}

/// Everything an agent integrates, and what it broadcasts to neighbours.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub xhat: Vector,
    pub bass: PiState<Matrix>,
    pub dual: PiState<Matrix>,
    pub size: PiState<f64>,
}

impl AgentState {
    pub fn zeros(n: usize) -> Self {
        AgentState {
            xhat: Vector::zeros(n),
            bass: PiState::<Matrix>::zeros(n),
            dual: PiState::<Matrix>::zeros(n),
            size: PiState::<f64>::zeros(),
        }
    }

    pub fn n(&self) -> usize {
        self.xhat.len()
    }

    pub fn zeros_like(&self) -> Self {
        AgentState::zeros(self.n())
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &AgentState) {
        self.xhat.axpy(s, &other.xhat, 1.0);
        self.bass.axpy(s, &other.bass);
        self.dual.axpy(s, &other.dual);
        self.size.axpy(s, &other.size);
    }

    pub fn is_finite(&self) -> bool {
        self.xhat.iter().all(|v| v.is_finite())
            && matlib::is_finite(&self.bass.integral)
            && matlib::is_finite(&self.bass.estimate)
            && matlib::is_finite(&self.dual.integral)
            && matlib::is_finite(&self.dual.estimate)
            && self.size.integral.is_finite()
            && self.size.estimate.is_finite()
    }
}

/// What an agent sees of its neighbourhood at one integration stage.
#[derive(Clone, Debug, Default)]
pub struct Neighborhood<'a> {
    /// Neighbouring agents' broadcast states with edge weights.
    pub agents: Vec<(&'a AgentState, f64)>,
    /// Informer's size-estimator state, if the informer is a neighbour.
    pub informer: Option<(&'a PiState<f64>, f64)>,
}

/// Gains in effect for one evaluation of the observer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gains {
    pub f: Matrix,
    pub l: Matrix,
    /// Multiplier of the input and injection terms (`ζᵢ` or the fixed `N`).
    pub scale: f64,
}

/// Terms of the coupling-gain formula, exposed for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTerms {
    pub theta: f64,
    pub kappa: f64,
    pub gamma: f64,
}

/// One control agent. It owns its channel `(Bᵢ, Cᵢ)` (normalized on
/// construction), its copy of `A`, its filters and its states, and never sees
/// another agent's channel or the plant state, except in state-feedback mode.
#[derive(Clone, Debug)]
pub struct ControlAgent {
    pub id: NodeId,
    pub a: Matrix,
    pub channel: Channel,
    pub params: AgentParams,
    pub mode: ControllerMode,
    pub state: AgentState,
    pub phi_x: PhiFilter,
    pub phi_y: PhiFilter,
    a_norm: f64,
}

impl ControlAgent {
    pub fn new(
        a: Matrix,
        channel: &Channel,
        params: AgentParams,
        mode: ControllerMode,
        initial: Option<AgentState>,
    ) -> Result<Self> {
        matlib::ensure_square(&a, "A")?;
        let n = a.nrows();
        let channel = channel.normalized();
        if channel.input.nrows() != n || channel.output.ncols() != n {
            return Err(Error::dim(format!("agent {} channel does not match n = {n}", channel.id)));
        }
        let state = initial.unwrap_or_else(|| AgentState::zeros(n));
        if state.n() != n || state.bass.estimate.nrows() != n || state.dual.estimate.nrows() != n {
            return Err(Error::dim(format!("agent {} initial state does not match n = {n}", channel.id)));
        }
        if let ControllerMode::StaticGains { f, l, agents, gamma } = &mode {
            if f.nrows() != channel.inputs() || f.ncols() != n || l.nrows() != n || l.ncols() != channel.outputs() {
                return Err(Error::dim(format!("agent {} static gains have the wrong shape", channel.id)));
            }
            if *agents == 0 || !(*gamma >= 0.0) {
                return Err(Error::config("controller_mode", "static gains need agents ≥ 1 and gamma ≥ 0"));
            }
        }
        params.validate()?;
        Ok(ControlAgent {
            id: channel.id,
            a_norm: matlib::induced_2norm(&a),
            a,
            phi_x: PhiFilter::new(n, params.phi_period),
            phi_y: PhiFilter::new(n, params.phi_period),
            channel,
            params,
            mode,
            state,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Samples the inverse filters at time `t` from the current state.
    pub fn update_filters(&mut self, t: f64) {
        self.phi_x.update(&self.state.bass.estimate, t);
        self.phi_y.update(&self.state.dual.estimate, t);
    }

    /// `Fᵢ = −BᵢᵀΦ(Xᵢ)/max{ζ,1}` and `Lᵢ = −Φ(Yᵢ)Cᵢᵀ/max{ζ,1}` for a given
    /// size estimate; in static mode the fixed gains.
    pub fn gains(&self, zeta: f64) -> Gains {
        match &self.mode {
            ControllerMode::StaticGains { f, l, agents, .. } => Gains {
                f: f.clone(),
                l: l.clone(),
                scale: *agents as f64,
            },
            _ => {
                let zc = zeta.max(1.0);
                Gains {
                    f: -(self.channel.input.transpose() * self.phi_x.value()) / zc,
                    l: -(self.phi_y.value() * self.channel.output.transpose()) / zc,
                    scale: zeta,
                }
            }
        }
    }

    pub fn current_gains(&self) -> Gains {
        self.gains(self.state.size.estimate)
    }

    /// The time-varying coupling gain and its ingredients, from the current
    /// filter outputs, `ζᵢ` and the raw `Yᵢ`. Static mode returns its fixed γ.
    pub fn coupling_terms(&self) -> CouplingTerms {
        if let ControllerMode::StaticGains { gamma, .. } = &self.mode {
            return CouplingTerms {
                theta: f64::NAN,
                kappa: f64::NAN,
                gamma: *gamma,
            };
        }
        let zc = self.state.size.estimate.max(1.0);
        let z2 = zc * zc;
        let px = self.phi_x.value();
        let py = self.phi_y.value();
        let sx = matlib::singular_values(px);
        let sy = matlib::singular_values(&self.state.dual.estimate);
        let px_norm = sx[0];
        let theta = self.a_norm + matlib::induced_2norm(py) + 2.0 * px_norm;
        let num = sx[0].max(z2 * sy[0]);
        let den = self.params.beta * sx[sx.len() - 1].min(z2 * sy[sy.len() - 1]);
        let kappa = num / den;
        if !(den > 0.0) || !kappa.is_finite() {
            return CouplingTerms {
                theta,
                kappa: f64::INFINITY,
                gamma: self.params.gamma_cap,
            };
        }
        let gamma = 1.0
            + z2 / 4.0
                * (theta
                    + theta * theta * kappa
                    + 4.0 * px_norm * px_norm * kappa * (1.0 + theta * theta * kappa * kappa).sqrt());
        CouplingTerms {
            theta,
            kappa,
            gamma: if gamma.is_finite() { gamma } else { self.params.gamma_cap },
        }
    }

    pub fn coupling_gain(&self) -> f64 {
        self.coupling_terms().gamma
    }

    /// Observer right-hand side without the coupling term:
    /// `Ax̂ + s·BᵢFᵢx̂ + s·Lᵢ(Cᵢx̂ − yᵢ)` where `s` is `ζᵢ` (or `N`).
    pub fn observer_local(&self, xhat: &Vector, y: &Vector, gains: &Gains) -> Vector {
        let b = &self.channel.input;
        let c = &self.channel.output;
        &self.a * xhat
            + (b * (&gains.f * xhat)) * gains.scale
            + (&gains.l * (c * xhat - y)) * gains.scale
    }

    /// `γ Σⱼ αᵢⱼ(x̂ⱼ − x̂ᵢ)`.
    pub fn observer_coupling(xhat: &Vector, nb: &Neighborhood<'_>, gamma: f64) -> Vector {
        let mut acc = Vector::zeros(xhat.len());
        for (s, w) in &nb.agents {
            acc += (&s.xhat - xhat) * *w;
        }
        acc * gamma
    }

    /// Full observer right-hand side.
    pub fn observer_derivative(
        &self,
        xhat: &Vector,
        y: &Vector,
        nb: &Neighborhood<'_>,
        gains: &Gains,
        gamma: f64,
    ) -> Vector {
        self.observer_local(xhat, y, gains) + Self::observer_coupling(xhat, nb, gamma)
    }

    /// Derivative of all agent states at stage state `st`. The coupling gain is
    /// held fixed by the caller; `ζ` enters the gains from the stage state. The
    /// observer coupling term is left out when `observer_coupling` is false.
    pub fn derivative(
        &self,
        st: &AgentState,
        y: &Vector,
        nb: &Neighborhood<'_>,
        gamma: f64,
        observer_coupling: bool,
    ) -> Result<AgentState> {
        let mut d = st.zeros_like();
        match self.mode {
            ControllerMode::StaticGains { .. } => {}
            _ => {
                let bass_nb: Vec<_> = nb.agents.iter().map(|(s, w)| (&s.bass, *w)).collect();
                let drift = consensus::bass_drift(&self.a, &self.channel.input, self.params.beta, &st.bass.estimate)?
                    * self.params.bass.k;
                d.bass = consensus::pi_agent_derivative(&st.bass, &bass_nb, drift, self.params.bass.gamma);
            }
        }
        if self.mode == ControllerMode::Algorithm1 {
            let dual_nb: Vec<_> = nb.agents.iter().map(|(s, w)| (&s.dual, *w)).collect();
            let drift = consensus::dual_drift(&self.a, &self.channel.output, self.params.beta, &st.dual.estimate)?
                * self.params.dual.k;
            d.dual = consensus::pi_agent_derivative(&st.dual, &dual_nb, drift, self.params.dual.gamma);

            let mut size_nb: Vec<_> = nb.agents.iter().map(|(s, w)| (&s.size, *w)).collect();
            if let Some((inf, w)) = nb.informer {
                size_nb.push((inf, w));
            }
            let drift = consensus::size_drift(self.id, st.size.estimate, self.params.size.k);
            d.size = consensus::pi_agent_derivative(&st.size, &size_nb, drift, self.params.size.gamma);
        }
        if self.mode != ControllerMode::StateFeedback {
            let gains = self.gains(st.size.estimate);
            d.xhat = self.observer_local(&st.xhat, y, &gains);
            if observer_coupling {
                d.xhat += Self::observer_coupling(&st.xhat, nb, gamma);
            }
        }
        Ok(d)
    }

    /// Internal control `uᵢ = Fᵢx̂ᵢ` (normalized channel units).
    pub fn control_output(&self, st: &AgentState) -> Result<Vector> {
        match self.mode {
            ControllerMode::StateFeedback => Err(Error::Mode(
                "state-feedback agents have no observer output; use state_feedback_output".into(),
            )),
            _ => Ok(self.gains(st.size.estimate).f * &st.xhat),
        }
    }

    /// Internal control `uᵢ = −BᵢᵀΦ(Xᵢ)x` from the full plant state.
    pub fn state_feedback_output(&self, x: &Vector) -> Result<Vector> {
        if self.mode != ControllerMode::StateFeedback {
            return Err(Error::Mode(format!(
                "agent {} is not in state-feedback mode",
                self.id
            )));
        }
        Ok(-(self.channel.input.transpose() * (self.phi_x.value() * x)))
    }

    /// Internal control in whichever mode the agent runs.
    pub fn output(&self, st: &AgentState, x: &Vector) -> Result<Vector> {
        match self.mode {
            ControllerMode::StateFeedback => self.state_feedback_output(x),
            _ => self.control_output(st),
        }
    }

    /// Internal measurement `y' = (Cᵢ/‖Cᵢ‖)x`.
    pub fn measure(&self, x: &Vector) -> Vector {
        &self.channel.output * x
    }

    /// Converts an internal control to the physical plant input.
    pub fn to_plant_input(&self, u: &Vector) -> Vector {
        u / self.channel.input_scale
    }
}
