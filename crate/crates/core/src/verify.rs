//! Randomized certificate suites behind `plugplay verify`.
//!
//! Every check draws its instances from a ChaCha stream keyed by the seed, the
//! check and the instance index, so reports do not depend on thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis;
use crate::bass;
use crate::consensus::{self, FlowParams, PiNetwork, PiState, INFORMER};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::instances;
use crate::matlib::{self, Matrix, Vector};
use crate::plant::PlantModel;
use crate::sim::{rk4_step, OdeState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    All,
    Bass,
    Consensus,
    Theorem1,
    Appendix,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "bass" => Suite::Bass,
            "consensus" => Suite::Consensus,
            "theorem1" => Suite::Theorem1,
            "appendix" => Suite::Appendix,
            other => return Err(Error::config("suite", format!("unknown suite `{other}`"))),
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::All => "all",
            Suite::Bass => "bass",
            Suite::Consensus => "consensus",
            Suite::Theorem1 => "theorem1",
            Suite::Appendix => "appendix",
        };
        f.write_str(s)
    }
}

/// One instance that failed, with enough data to reproduce it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Failure {
    pub index: usize,
    pub value: f64,
    pub instance: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub description: String,
    pub instances: usize,
    pub passed: usize,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    /// What the quantity is compared against.
    pub bound: String,
    pub seconds: f64,
    pub failures: Vec<Failure>,
}

impl CheckResult {
    pub fn ok(&self) -> bool {
        self.passed == self.instances
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok())
    }

    /// Plain-text table, one line per check.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<26} {:>9} {:>12} {:>22} {:>8}  status\n",
            "check", "passed", "worst", "bound", "time[s]"
        );
        for c in &self.checks {
            out += &format!(
                "{:<26} {:>4}/{:<4} {:>12.3e} {:>22} {:>8.2}  {}\n",
                c.name,
                c.passed,
                c.instances,
                c.worst,
                c.bound,
                c.seconds,
                if c.ok() { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

/// Outcome of one instance: the checked value, whether it passed, and the
/// instance description kept for failures.
struct Outcome {
    value: f64,
    pass: bool,
    instance: serde_json::Value,
}

fn instance_rng(seed: u64, check: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ check.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64);
    rng
}

/// Larger is worse unless `lower_is_worse`.
fn run_check<F>(
    name: &str,
    description: &str,
    bound: String,
    count: usize,
    lower_is_worse: bool,
    f: F,
) -> CheckResult
where
    F: Fn(usize) -> Result<Outcome> + Sync,
{
    let start = Instant::now();
    let outcomes: Vec<Outcome> = (0..count)
        .into_par_iter()
        .map(|i| {
            f(i).unwrap_or_else(|e| Outcome {
                value: f64::NAN,
                pass: false,
                instance: json!({ "error": e.to_string() }),
            })
        })
        .collect();
    let mut worst = if lower_is_worse { f64::INFINITY } else { f64::NEG_INFINITY };
    let mut failures = Vec::new();
    for (index, o) in outcomes.into_iter().enumerate() {
        if o.value.is_nan() {
            worst = f64::NAN;
        } else if !worst.is_nan() {
            worst = if lower_is_worse { worst.min(o.value) } else { worst.max(o.value) };
        }
        if !o.pass {
            failures.push(Failure {
                index,
                value: o.value,
                instance: o.instance,
            });
        }
    }
    CheckResult {
        name: name.into(),
        description: description.into(),
        instances: count,
        passed: count - failures.len(),
        worst,
        bound,
        seconds: start.elapsed().as_secs_f64(),
        failures,
    }
}

fn plant_json(p: &PlantModel, beta: f64, g: Option<&Graph>) -> serde_json::Value {
    json!({ "plant": p, "beta": beta, "graph": g })
}

fn pair_json(a: &Matrix, b: &Matrix, beta: f64) -> serde_json::Value {
    let rows = |m: &Matrix| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    json!({ "A": rows(a), "B": rows(b), "beta": beta })
}

/// `X*` with `AX + XAᵀ = −Q` for the shifted pair, `−(A+βI)X − X(A+βI)ᵀ + 2BBᵀ = 0`.
fn shifted_residual(a: &Matrix, b: &Matrix, beta: f64, x: &Matrix) -> f64 {
    let s = -(a + matlib::identity(a.nrows()) * beta);
    matlib::lyapunov_residual(&s, x, &(b * b.transpose() * 2.0))
}

// ---------------------------------------------------------------- bass suite

/// Bass gains: abscissa of `A + BF` at most `−β + 1e−6`, `X* ≻ 0`, residual ≤ 1e−8.
pub fn check_bass_abscissa(seed: u64, count: usize) -> CheckResult {
    run_check(
        "bass_abscissa",
        "spectral abscissa of A+BF plus beta, with X* positive definite and small residual",
        "<= 1e-6".into(),
        count,
        false,
        |i| {
            let mut rng = instance_rng(seed, 1, i);
            let (a, bs, beta) = instances::controllable_pair(&mut rng, 6, 4, (0.1, 2.0));
            let b = matlib::hcat(a.nrows(), &bs.iter().collect::<Vec<_>>())?;
            let sol = bass::bass_solve(&a, &b, beta)?;
            let slack = matlib::spectral_abscissa(&(&a + &b * &sol.f))? + beta;
            let resid = shifted_residual(&a, &b, beta, &sol.x_star);
            let pd = matlib::is_positive_definite(&sol.x_star);
            Ok(Outcome {
                value: slack,
                pass: slack <= 1e-6 && pd && resid <= 1e-8,
                instance: json!({ "pair": pair_json(&a, &b, beta), "residual": resid, "pd": pd }),
            })
        },
    )
}

/// Closed loops `ẋ = (A+BF)x` integrated with RK4 (h = 1e−3, horizon 10) stay
/// inside the decay envelope.
pub fn check_decay_envelopes(seed: u64, count: usize) -> CheckResult {
    run_check(
        "decay_envelope",
        "max over samples of |x(t)| minus the envelope, relative to |x(0)|",
        "<= 1e-6".into(),
        count,
        false,
        |i| {
            let mut rng = instance_rng(seed, 2, i);
            let (a, bs, beta) = instances::controllable_pair(&mut rng, 6, 4, (0.1, 2.0));
            let b = matlib::hcat(a.nrows(), &bs.iter().collect::<Vec<_>>())?;
            let sol = bass::bass_solve(&a, &b, beta)?;
            let acl = &a + &b * &sol.f;
            let x0 = instances::random_matrix(&mut rng, a.nrows(), 1, 1.0).column(0).into_owned();
            let h = 1e-3;
            let mut x = x0.clone();
            let mut traj = vec![(0.0, x.clone())];
            for k in 0..10_000 {
                x = rk4_step(|_, v: &Vector| Ok(&acl * v), &x, k as f64 * h, h)?;
                traj.push(((k + 1) as f64 * h, x.clone()));
            }
            let c = sol.envelope_constant()?;
            let n0 = x0.norm();
            let excess = traj
                .iter()
                .map(|(t, x)| (x.norm() - c * (-beta * t).exp() * n0) / n0)
                .fold(f64::NEG_INFINITY, f64::max);
            let pass = bass::decay_certificate(&sol, &traj)?;
            Ok(Outcome {
                value: excess,
                pass,
                instance: json!({ "pair": pair_json(&a, &b, beta), "x0": x0.as_slice() }),
            })
        },
    )
}

// ------------------------------------------------------------ linear flows

/// Flattens a PI network into one vector and back.
pub trait Packed: Sized {
    fn pack(&self) -> Vector;
    fn unpack(&self, v: &Vector) -> Self;
}

impl Packed for PiNetwork<Matrix> {
    fn pack(&self) -> Vector {
        let mut out = Vec::new();
        for s in self.values() {
            out.extend(s.integral.iter());
            out.extend(s.estimate.iter());
        }
        Vector::from_vec(out)
    }

    fn unpack(&self, v: &Vector) -> Self {
        let mut k = 0;
        self.iter()
            .map(|(&id, s)| {
                let (r, c) = s.estimate.shape();
                let z = Matrix::from_column_slice(r, c, &v.as_slice()[k..k + r * c]);
                let x = Matrix::from_column_slice(r, c, &v.as_slice()[k + r * c..k + 2 * r * c]);
                k += 2 * r * c;
                (id, PiState::new(z, x))
            })
            .collect()
    }
}

impl Packed for PiNetwork<f64> {
    fn pack(&self) -> Vector {
        Vector::from_iterator(2 * self.len(), self.values().flat_map(|s| [s.integral, s.estimate]))
    }

    fn unpack(&self, v: &Vector) -> Self {
        self.keys()
            .enumerate()
            .map(|(k, &id)| (id, PiState::new(v[2 * k], v[2 * k + 1])))
            .collect()
    }
}

/// `ż = Mz + c`, recovered by probing a flow's right-hand side.
pub struct AffineFlow {
    pub m: Matrix,
    pub c: Vector,
}

impl AffineFlow {
    pub fn probe(dim: usize, f: impl Fn(&Vector) -> Result<Vector>) -> Result<Self> {
        let c = f(&Vector::zeros(dim))?;
        let mut m = Matrix::zeros(dim, dim);
        for j in 0..dim {
            let mut e = Vector::zeros(dim);
            e[j] = 1.0;
            m.set_column(j, &(f(&e)? - &c));
        }
        Ok(AffineFlow { m, c })
    }

    /// Slowest decay rate after dropping the `conserved` eigenvalues closest
    /// to zero, and the spectral radius.
    pub fn rates(&self, conserved: usize) -> Result<(f64, f64)> {
        let mut ev = matlib::eigenvalues(&self.m)?.eigenvalues;
        ev.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        let radius = ev.last().map_or(0.0, |z| z.norm());
        let rate = ev[conserved.min(ev.len())..]
            .iter()
            .map(|z| -z.re)
            .fold(f64::INFINITY, f64::min);
        Ok((rate, radius))
    }

    /// Exact samples `z(k·dt)`, `k = 0..=steps`.
    pub fn propagate(&self, z0: &Vector, dt: f64, steps: usize) -> Vec<Vector> {
        let d = z0.len();
        let mut aug = Matrix::zeros(d + 1, d + 1);
        aug.view_mut((0, 0), (d, d)).copy_from(&self.m);
        aug.view_mut((0, d), (d, 1)).copy_from(&self.c);
        let e = matlib::expm(&aug, dt);
        let mut z = z0.clone().insert_row(d, 1.0);
        let mut out = vec![z0.clone()];
        for _ in 0..steps {
            z = &e * z;
            out.push(z.rows(0, d).into_owned());
        }
        out
    }
}

fn random_params(rng: &mut impl Rng) -> FlowParams {
    let k = 10f64.powf(rng.gen_range(-0.7..0.7));
    let gamma = 10f64.powf(rng.gen_range(-0.7..0.7));
    FlowParams { k, gamma }
}

fn random_network(rng: &mut impl Rng, ids: &[NodeId], n: usize) -> PiNetwork<Matrix> {
    ids.iter()
        .map(|&id| {
            (
                id,
                PiState::new(instances::random_matrix(rng, n, n, 1.0), instances::random_matrix(rng, n, n, 1.0)),
            )
        })
        .collect()
}

/// A distributed Bass (or dual) problem on a random connected graph.
struct FlowProblem {
    plant: PlantModel,
    beta: f64,
    g: Graph,
    dual: bool,
    channels: BTreeMap<NodeId, Matrix>,
    reference: Matrix,
}

impl FlowProblem {
    fn draw(rng: &mut impl Rng, agents: usize, dual: bool) -> Result<Self> {
        let (plant, beta) = instances::random_plant_in(rng, 4, agents..=agents, (0.25, 1.0));
        let ids: Vec<NodeId> = plant.ids();
        let g = instances::connected_graph(rng, &ids, 0.3);
        let all: BTreeSet<NodeId> = ids.iter().copied().collect();
        let (b, c) = plant.aggregate(&all)?;
        let nf = ids.len() as f64;
        let (channels, reference) = if dual {
            let ch = plant.channels.iter().map(|(&id, c)| (id, c.output.clone())).collect();
            (ch, bass::dual_bass_solve(&plant.a, &c, beta)?.y_star / nf)
        } else {
            let ch = plant.channels.iter().map(|(&id, c)| (id, c.input.clone())).collect();
            (ch, bass::bass_solve(&plant.a, &b, beta)?.x_star / nf)
        };
        Ok(FlowProblem {
            plant,
            beta,
            g,
            dual,
            channels,
            reference,
        })
    }

    fn derivative(&self, params: FlowParams, st: &PiNetwork<Matrix>) -> Result<PiNetwork<Matrix>> {
        if self.dual {
            consensus::dual_flow_derivative(&self.plant.a, &self.channels, self.beta, params, &self.g, st)
        } else {
            consensus::bass_flow_derivative(&self.plant.a, &self.channels, self.beta, params, &self.g, st)
        }
    }

    fn affine(&self, params: FlowParams, template: &PiNetwork<Matrix>) -> Result<AffineFlow> {
        AffineFlow::probe(template.pack().len(), |v| Ok(self.derivative(params, &template.unpack(v))?.pack()))
    }

    fn error(&self, st: &PiNetwork<Matrix>) -> f64 {
        st.values()
            .map(|s| matlib::induced_2norm(&(&s.estimate - &self.reference)))
            .fold(0.0, f64::max)
    }

    fn certificate_a(&self) -> Matrix {
        if self.dual {
            self.plant.a.transpose()
        } else {
            self.plant.a.clone()
        }
    }

    fn json(&self, params: FlowParams) -> serde_json::Value {
        json!({ "instance": plant_json(&self.plant, self.beta, Some(&self.g)), "dual": self.dual, "params": params })
    }
}

/// Distributed Bass (or dual) flow from random states with random positive
/// `(k, γ)`: `max ‖Xᵢ(T) − X*/N‖ < 1e−6`, `T` from the flow's decay rate.
pub fn check_flow_convergence(seed: u64, count: usize, dual: bool) -> CheckResult {
    let name = if dual { "dual_flow_convergence" } else { "bass_flow_convergence" };
    run_check(
        name,
        "max_i |X_i(T) - X*/N| from random initial states and random (k, gamma)",
        "< 1e-6".into(),
        count,
        false,
        |i| {
            let mut rng = instance_rng(seed, if dual { 4 } else { 3 }, i);
            let pb = FlowProblem::draw(&mut rng, 5, dual)?;
            let params = random_params(&mut rng);
            let n = pb.plant.n();
            let z0 = random_network(&mut rng, &pb.plant.ids(), n);
            let flow = pb.affine(params, &z0)?;
            let (rate, _) = flow.rates(n * n)?;
            let cert = consensus::certified_bass_rate(&pb.certificate_a(), pb.beta, &pb.g, params)?;
            let e0 = pb.error(&z0).max(1.0);
            let horizon = ((e0 / 1e-6).ln() + 1e3f64.ln()) / rate;
            let steps = 400;
            let traj = flow.propagate(&z0.pack(), horizon / steps as f64, steps);
            let err = pb.error(&z0.unpack(traj.last().unwrap()));
            Ok(Outcome {
                value: err,
                pass: rate > 0.0 && err < 1e-6,
                instance: json!({ "problem": pb.json(params), "T": horizon, "rate": rate, "certified_rate": cert }),
            })
        },
    )
}

/// With the gains certifying `Δ = 0.5`, the fitted tail decay rate of
/// `max ‖Xᵢ − X*/N‖` is at least `0.95Δ`.
pub fn check_flow_rate(seed: u64, count: usize, dual: bool) -> CheckResult {
    let name = if dual { "dual_flow_rate" } else { "bass_flow_rate" };
    let delta = 0.5;
    run_check(
        name,
        "fitted tail decay rate with parameters certifying Delta = 0.5",
        ">= 0.475".into(),
        count,
        true,
        |i| {
            let mut rng = instance_rng(seed, if dual { 6 } else { 5 }, i);
            let pb = FlowProblem::draw(&mut rng, 5, dual)?;
            let params = consensus::bass_rate_params(&pb.certificate_a(), pb.beta, &pb.g, delta)?;
            let n = pb.plant.n();
            let z0 = random_network(&mut rng, &pb.plant.ids(), n);
            let flow = pb.affine(params, &z0)?;
            let fitted = fitted_rate(&flow, &z0, |z| pb.error(&z0.unpack(z)), n * n, 1e-9);
            Ok(Outcome {
                value: fitted,
                pass: fitted >= 0.95 * delta,
                instance: json!({ "problem": pb.json(params), "delta": delta }),
            })
        },
    )
}

/// Propagates until the error has dropped to `floor` (bounded by the exact
/// rate) and fits the decay over the second half of the run.
fn fitted_rate(
    flow: &AffineFlow,
    z0: &impl Packed,
    error: impl Fn(&Vector) -> f64,
    conserved: usize,
    floor: f64,
) -> f64 {
    let Ok((rate, _)) = flow.rates(conserved) else {
        return f64::NAN;
    };
    if !(rate > 0.0) {
        return 0.0;
    }
    let start = z0.pack();
    let e0 = error(&start).max(floor * 10.0);
    let horizon = (e0 / floor).ln() / rate;
    let steps = 400;
    let dt = horizon / steps as f64;
    let samples: Vec<(f64, f64)> = flow
        .propagate(&start, dt, steps)
        .iter()
        .enumerate()
        .map(|(k, z)| (k as f64 * dt, error(z)))
        .filter(|(_, e)| *e > floor)
        .collect();
    analysis::fit_decay_rate(&samples, horizon / 2.0).unwrap_or(f64::NAN)
}

/// RK4 on the actual flow code agrees with the exact affine propagation.
pub fn check_flow_integration(seed: u64, count: usize) -> CheckResult {
    run_check(
        "flow_rk4_crosscheck",
        "max deviation between RK4 and exact propagation over t in [0, 2]",
        "<= 1e-8".into(),
        count,
        false,
        |i| {
            let mut rng = instance_rng(seed, 7, i);
            let pb = FlowProblem::draw(&mut rng, 5, i % 2 == 1)?;
            let params = random_params(&mut rng);
            let z0 = random_network(&mut rng, &pb.plant.ids(), pb.plant.n());
            let flow = pb.affine(params, &z0)?;
            let (_, radius) = flow.rates(0)?;
            let h = (1e-2f64).min(0.5 / radius.max(1e-9));
            let steps = (2.0 / h).ceil() as usize;
            let h = 2.0 / steps as f64;
            let mut st = z0.clone();
            for k in 0..steps {
                st = rk4_step(|_, s: &PiNetwork<Matrix>| pb.derivative(params, s), &st, k as f64 * h, h)?;
            }
            let exact = z0.unpack(flow.propagate(&z0.pack(), 2.0, 1).last().unwrap());
            let scale = exact.pack().amax().max(1.0);
            let dev = (st.pack() - exact.pack()).amax() / scale;
            Ok(Outcome {
                value: dev,
                pass: dev <= 1e-8 && st.is_finite(),
                instance: pb.json(params),
            })
        },
    )
}

/// The informer topologies used by the size checks: `(label, N, Ḡ)`.
pub fn size_topologies() -> Vec<(String, usize, Graph)> {
    let mut out = Vec::new();
    for n in 1..=8usize {
        let ids: Vec<NodeId> = (0..=n as NodeId).collect();
        let agents: Vec<NodeId> = (1..=n as NodeId).collect();
        out.push((format!("star{n}"), n, Graph::star(INFORMER, &agents)));
        out.push((format!("ring{n}"), n, Graph::ring(&ids)));
        out.push((format!("path{n}"), n, Graph::path(&ids)));
    }
    out
}

fn size_flow(params: FlowParams, g: &Graph, template: &PiNetwork<f64>) -> Result<AffineFlow> {
    AffineFlow::probe(template.pack().len(), |v| {
        Ok(consensus::size_flow_derivative(params, g, &template.unpack(v))?.pack())
    })
}

fn random_size_state(rng: &mut impl Rng, g: &Graph) -> PiNetwork<f64> {
    g.node_ids()
        .into_iter()
        .map(|id| (id, PiState::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))))
        .collect()
}

fn size_error(st: &PiNetwork<f64>, n: usize) -> f64 {
    st.values()
        .map(|s| (s.estimate - n as f64).abs())
        .fold(0.0, f64::max)
}

/// Size estimator with unit gains from random states: every `ζᵢ(T)` within
/// 1e−3 of `N`.
pub fn check_size_convergence(seed: u64) -> CheckResult {
    let tops = size_topologies();
    run_check(
        "size_convergence",
        "max_i |zeta_i(T) - N| over star/ring/path informer graphs, N = 1..8",
        "< 1e-3".into(),
        tops.len(),
        false,
        |i| {
            let (label, n, g) = &tops[i];
            let mut rng = instance_rng(seed, 8, i);
            let params = FlowParams::default();
            let z0 = random_size_state(&mut rng, g);
            let flow = size_flow(params, g, &z0)?;
            let (rate, _) = flow.rates(1)?;
            let e0 = size_error(&z0, *n).max(1.0);
            let horizon = ((e0 / 1e-3).ln() + 1e3f64.ln()) / rate;
            let traj = flow.propagate(&z0.pack(), horizon / 200.0, 200);
            let err = size_error(&z0.unpack(traj.last().unwrap()), *n);
            Ok(Outcome {
                value: err,
                pass: rate > 0.0 && err < 1e-3,
                instance: json!({ "topology": label, "graph": g, "T": horizon }),
            })
        },
    )
}

/// Size estimator with the gains certifying `Δ = 0.2`: fitted rate ≥ 0.19.
pub fn check_size_rate(seed: u64) -> CheckResult {
    let tops = size_topologies();
    let delta = 0.2;
    run_check(
        "size_rate",
        "fitted tail decay rate of max_i |zeta_i - N| with parameters certifying Delta = 0.2",
        ">= 0.19".into(),
        tops.len(),
        true,
        |i| {
            let (label, n, g) = &tops[i];
            let mut rng = instance_rng(seed, 9, i);
            let params = consensus::size_rate_params(*n, g, delta)?;
            let z0 = random_size_state(&mut rng, g);
            let flow = size_flow(params, g, &z0)?;
            let fitted = fitted_rate(&flow, &z0, |z| size_error(&z0.unpack(z), *n), 1, 1e-9);
            Ok(Outcome {
                value: fitted,
                pass: fitted >= 0.19,
                instance: json!({ "topology": label, "graph": g, "params": params }),
            })
        },
    )
}

// ----------------------------------------------------------- theorem suite

/// Largest threshold for which `|M|·ε` stays below the decay margins tested.
pub const MAX_RESOLVABLE_GAMMA: f64 = 1e12;

struct LoopInstance {
    plant: PlantModel,
    beta: f64,
    g: Graph,
    design: bass::BassDesign,
}

impl LoopInstance {
    fn draw(rng: &mut impl Rng, max_n: usize, max_agents: usize, beta: (f64, f64)) -> Result<Self> {
        let (plant, beta) = instances::random_plant(rng, max_n, max_agents, beta);
        let ids = instances::active_ids(&plant);
        let g = instances::connected_graph(rng, &ids.iter().copied().collect::<Vec<_>>(), 0.3);
        let design = bass::bass_design(&plant, &ids, beta)?;
        Ok(LoopInstance { plant, beta, g, design })
    }

    /// Redraws until the threshold is small enough that the closed loop at
    /// that coupling can be resolved in double precision.
    fn draw_resolvable(rng: &mut impl Rng) -> Result<(Self, bass::ThresholdCertificate)> {
        loop {
            let li = LoopInstance::draw(rng, 4, 5, (0.25, 1.0))?;
            let cert = bass::bass_threshold(&li.plant, &li.design, &li.g)?;
            if cert.gamma_min <= MAX_RESOLVABLE_GAMMA {
                return Ok((li, cert));
            }
        }
    }

    fn json(&self) -> serde_json::Value {
        plant_json(&self.plant, self.beta, Some(&self.g))
    }
}

/// Coupling at 1.01 times the threshold makes the closed loop Hurwitz, the
/// true threshold found by bisection lies below the bound, and the loop
/// decays: `‖x(20/β)‖ < 1e−2‖x(0)‖` from a random start.
pub fn check_threshold(seed: u64, count: usize) -> CheckResult {
    run_check(
        "threshold_hurwitz",
        "spectral abscissa of the closed loop at 1.01 x threshold (plus bisection and decay checks)",
        "< 0".into(),
        count,
        false,
        |i| {
            let mut rng = instance_rng(seed, 10, i);
            let (li, cert) = LoopInstance::draw_resolvable(&mut rng)?;
            let gamma = 1.01 * cert.gamma_min;
            let dec = analysis::closed_loop_matrix(&li.plant, &li.design.gains, gamma, &li.g)?;
            let abscissa = matlib::spectral_abscissa(&dec.assembled)?;
            let crit = analysis::critical_gamma(&li.plant, &li.design.gains, &li.g, gamma.max(1e-12), 1e-3)?;
            let flat = analysis::flat_closed_loop(&li.plant, &li.design.gains, gamma, &li.g)?;
            let z0 = instances::random_matrix(&mut rng, flat.nrows(), 1, 1.0).column(0).into_owned();
            let n = li.plant.n();
            let horizon = 20.0 / li.beta;
            let e = matlib::expm(&flat, horizon / 100.0);
            let mut z = z0.clone();
            for _ in 0..100 {
                z = &e * z;
            }
            let ratio = z.rows(0, n).norm() / z0.rows(0, n).norm();
            let crit_ok = crit.is_some_and(|c| c <= gamma);
            Ok(Outcome {
                value: abscissa,
                pass: abscissa < 0.0 && crit_ok && ratio < 1e-2,
                instance: json!({
                    "instance": li.json(),
                    "gamma_min": cert.gamma_min,
                    "critical_gamma": crit,
                    "decay_ratio": ratio,
                }),
            })
        },
    )
}

/// The five block-norm bounds of the error-coordinate closed loop.
pub fn check_block_bounds(seed: u64, count: usize) -> CheckResult {
    run_check(
        "block_bounds",
        "max over blocks of norm / bound",
        "<= 1".into(),
        count,
        false,
        |i| {
            let mut rng = instance_rng(seed, 11, i);
            let li = LoopInstance::draw(&mut rng, 4, 6, (0.1, 1.0))?;
            let dec = analysis::closed_loop_matrix(&li.plant, &li.design.gains, 1.0, &li.g)?;
            let rep = analysis::verify_block_bounds(&dec, &li.plant, &li.design.gains);
            let worst = rep
                .checks
                .iter()
                .map(|c| if c.rhs > 0.0 { c.lhs / c.rhs } else if c.lhs > 0.0 { f64::INFINITY } else { 0.0 })
                .fold(0.0, f64::max);
            Ok(Outcome {
                value: worst,
                pass: rep.all_pass(),
                instance: json!({ "instance": li.json(), "report": rep }),
            })
        },
    )
}

/// The assembled matrix and the closed loop in original coordinates have the
/// same spectrum.
pub fn check_spectrum_equivalence(seed: u64, count: usize) -> CheckResult {
    run_check(
        "spectrum_equivalence",
        "largest greedy-pairing distance between the two spectra, relative to max(1, |M|)",
        "<= 1e-7".into(),
        count,
        false,
        |i| {
            let mut rng = instance_rng(seed, 12, i);
            let li = LoopInstance::draw(&mut rng, 4, 5, (0.25, 1.0))?;
            let gamma = 10f64.powf(rng.gen_range(-1.0..1.0));
            let dec = analysis::closed_loop_matrix(&li.plant, &li.design.gains, gamma, &li.g)?;
            let flat = analysis::flat_closed_loop(&li.plant, &li.design.gains, gamma, &li.g)?;
            let s1 = matlib::eigenvalues(&dec.assembled)?;
            let s2 = matlib::eigenvalues(&flat)?;
            let scale = matlib::induced_2norm(&flat).max(1.0);
            let dist = spectrum_distance(&s1.eigenvalues, &s2.eigenvalues) / scale;
            Ok(Outcome {
                value: dist,
                pass: dist <= 1e-7 && s1.matches(&s2, 1e-7 * scale),
                instance: json!({ "instance": li.json(), "gamma": gamma }),
            })
        },
    )
}

fn spectrum_distance(a: &[num_complex::Complex64], b: &[num_complex::Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for z in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, w)| (k, (z - w).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

// ---------------------------------------------------------- appendix suite

/// Equilibria of the vectorized Bass flow: `unvec(χ̄*) = X*/N`, and the
/// transformed coordinates of a propagated trajectory reach `(ν̃*, χ̄*)`.
pub fn check_bass_equilibria(seed: u64, count: usize) -> CheckResult {
    run_check(
        "bass_equilibria",
        "distance of transformed coordinates at T to (nu_tilde*, chi_bar*), and of unvec(chi_bar*) to X*/N",
        "< 1e-6 and 1e-10".into(),
        count,
        false,
        |i| {
            let mut rng = instance_rng(seed, 13, i);
            let agents = rng.gen_range(2..=5);
            let pb = FlowProblem::draw(&mut rng, agents, false)?;
            let params = random_params(&mut rng);
            let n = pb.plant.n();
            let (nu_t, chi_bar) = analysis::bass_equilibria(&pb.plant.a, &pb.channels, pb.beta, params, &pb.g)?;
            let xs = matlib::unvec(&chi_bar, n, n)?;
            let scale = pb.reference.amax().max(1.0);
            let eq_err = (&xs - &pb.reference).amax() / scale;
            let z0 = random_network(&mut rng, &pb.plant.ids(), n);
            let flow = pb.affine(params, &z0)?;
            let (rate, _) = flow.rates(n * n)?;
            let e0 = pb.error(&z0).max(nu_t.amax()).max(1.0);
            let horizon = ((e0 / 1e-6).ln() + 1e3f64.ln()) / rate;
            let traj = flow.propagate(&z0.pack(), horizon / 400.0, 400);
            let fin = z0.unpack(traj.last().unwrap());
            let (_, nu_tilde, chi_bar_t, _) = analysis::transformed_coordinates(&fin, &pb.g)?;
            let conv = (nu_tilde - &nu_t).amax().max((chi_bar_t - &chi_bar).amax());
            Ok(Outcome {
                value: conv,
                pass: eq_err <= 1e-10 && conv < 1e-6,
                instance: json!({ "problem": pb.json(params), "equilibrium_error": eq_err, "T": horizon }),
            })
        },
    )
}

/// The size-estimator equilibrium is a fixed point of the flow.
pub fn check_size_equilibrium(seed: u64) -> CheckResult {
    let tops = size_topologies();
    run_check(
        "size_equilibrium",
        "largest derivative entry at the reconstructed equilibrium",
        "<= 1e-12".into(),
        tops.len(),
        false,
        |i| {
            let (label, n, g) = &tops[i];
            let mut rng = instance_rng(seed, 14, i);
            let params = random_params(&mut rng);
            let st = analysis::size_equilibrium_state(params, g)?;
            let d = consensus::size_flow_derivative(params, g, &st)?;
            let worst = d
                .values()
                .map(|s| s.integral.abs().max(s.estimate.abs()))
                .fold(0.0, f64::max);
            let zeta_ok = st.values().all(|s| s.estimate == *n as f64);
            Ok(Outcome {
                value: worst,
                pass: worst <= 1e-12 && zeta_ok,
                instance: json!({ "topology": label, "params": params }),
            })
        },
    )
}

/// The composite Lyapunov function decreases along the closed loop at
/// 1.01 times the threshold: `SM + MᵀS ≺ 0` and `V` falls between samples.
pub fn check_lyapunov_decrease(seed: u64, count: usize) -> CheckResult {
    run_check(
        "lyapunov_decrease",
        "largest eigenvalue of sym(S^1/2 M S^-1/2), with V = z'Sz/2",
        "< 0".into(),
        count,
        false,
        |i| {
            let mut rng = instance_rng(seed, 15, i);
            let (li, cert) = LoopInstance::draw_resolvable(&mut rng)?;
            let gamma = 1.01 * cert.gamma_min;
            let dec = analysis::closed_loop_matrix(&li.plant, &li.design.gains, gamma, &li.g)?;
            let w = analysis::lyapunov_weights(&cert)?;
            let m = &dec.assembled;
            let s = w.matrix(&cert, m.nrows());
            // V̇ < 0 for all z iff sym(S^½ M S^−½) ≺ 0
            let (vals, q) = matlib::symmetric_eigen(&s)?;
            let root = |p: f64| &q * Matrix::from_diagonal(&Vector::from_iterator(vals.len(), vals.iter().map(|v| v.powf(p)))) * q.transpose();
            let sim = root(0.5) * m * root(-0.5);
            let top = matlib::lambda_max_sym(&((&sim + sim.transpose()) * 0.5))?;
            let z0 = instances::random_matrix(&mut rng, m.nrows(), 1, 1.0).column(0).into_owned();
            let e = matlib::expm(m, 0.05);
            let mut z = z0;
            let mut v = w.value(&cert, &z);
            let mut monotone = true;
            for _ in 0..40 {
                z = &e * z;
                let next = w.value(&cert, &z);
                monotone &= next < v;
                v = next;
            }
            Ok(Outcome {
                value: top,
                pass: top < 0.0 && monotone,
                instance: json!({ "instance": li.json(), "gamma": gamma, "weights": w }),
            })
        },
    )
}

// ------------------------------------------------------------------ driver

/// Runs a suite with the default instance counts.
pub fn run_suite(suite: Suite, seed: u64) -> Report {
    let mut checks = Vec::new();
    let want = |s: Suite| suite == Suite::All || suite == s;
    if want(Suite::Bass) {
        checks.push(check_bass_abscissa(seed, 200));
        checks.push(check_decay_envelopes(seed, 50));
    }
    if want(Suite::Consensus) {
        checks.push(check_flow_convergence(seed, 25, false));
        checks.push(check_flow_convergence(seed, 25, true));
        checks.push(check_flow_rate(seed, 10, false));
        checks.push(check_flow_rate(seed, 10, true));
        checks.push(check_flow_integration(seed, 10));
        checks.push(check_size_convergence(seed));
        checks.push(check_size_rate(seed));
    }
    if want(Suite::Theorem1) {
        checks.push(check_threshold(seed, 100));
        checks.push(check_block_bounds(seed, 500));
        checks.push(check_spectrum_equivalence(seed, 100));
    }
    if want(Suite::Appendix) {
        checks.push(check_bass_equilibria(seed, 25));
        checks.push(check_size_equilibrium(seed));
        checks.push(check_lyapunov_decrease(seed, 100));
    }
    Report { suite, seed, checks }
}

/// Worker count from `PLUGPLAY_THREADS` (unset or 0 means automatic).
pub fn thread_count() -> usize {
    std::env::var("PLUGPLAY_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Runs `f` on a pool capped at `threads` workers (0 = automatic).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("PLUGPLAY_THREADS", e.to_string()))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in [Suite::All, Suite::Bass, Suite::Consensus, Suite::Theorem1, Suite::Appendix] {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn packing_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_network(&mut rng, &[1, 4, 9], 3);
        assert_eq!(net.unpack(&net.pack()), net);
        let s: PiNetwork<f64> = [(0, PiState::new(1.0, 2.0)), (3, PiState::new(-1.0, 0.5))].into();
        assert_eq!(s.unpack(&s.pack()), s);
    }

    #[test]
    fn affine_probe_of_scalar_decay() {
        let f = AffineFlow::probe(1, |v| Ok(Vector::from_element(1, 2.0 - 3.0 * v[0]))).unwrap();
        assert_eq!(f.m[(0, 0)], -3.0);
        assert_eq!(f.c[0], 2.0);
        let traj = f.propagate(&Vector::zeros(1), 0.5, 4);
        let exact = 2.0 / 3.0 * (1.0 - (-3.0f64 * 2.0).exp());
        assert!((traj[4][0] - exact).abs() < 1e-14);
    }

    #[test]
    fn small_runs_are_deterministic() {
        let a = check_bass_abscissa(3, 8);
        let b = with_threads(1, || check_bass_abscissa(3, 8)).unwrap();
        assert!(a.ok());
        assert_eq!(a.worst, b.worst);
    }

    #[test]
    fn quick_suites_pass() {
        for c in [
            check_decay_envelopes(1, 3),
            check_flow_convergence(1, 2, false),
            check_flow_convergence(1, 2, true),
            check_flow_integration(1, 2),
            check_size_equilibrium(1),
            check_threshold(1, 3),
            check_block_bounds(1, 20),
            check_spectrum_equivalence(1, 5),
            check_bass_equilibria(1, 2),
        ] {
            assert!(c.ok(), "{}", serde_json::to_string_pretty(&c).unwrap());
        }
    }
}
