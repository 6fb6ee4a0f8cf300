//! Proportional-integral coupled flows: the distributed Bass solver, its dual,
//! and the network-size estimator with an informer node.
//!
//! Every flow has the same shape. Node `i` carries an integral state `Zᵢ` and an
//! estimate `Xᵢ`:
//!
//! ```text
//! Żᵢ = −γ Σⱼ αᵢⱼ (Xⱼ − Xᵢ)
//! Ẋᵢ = dᵢ(Xᵢ) + γ Σⱼ αᵢⱼ (Xⱼ − Xᵢ) + γ Σⱼ αᵢⱼ (Zⱼ − Zᵢ)
//! ```
//!
//! and only the local drift `dᵢ` differs between flows. The number of agents
//! never enters a drift.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::matlib::{self, Matrix};

/// Node id reserved for the informer in the size estimator.
pub const INFORMER: NodeId = 0;

/// Values a PI flow can carry.
pub trait FlowValue: Clone + Send + Sync {
    fn zeros_like(&self) -> Self;
    /// `self += s · other`.
    fn axpy(&mut self, s: f64, other: &Self);
    fn norm(&self) -> f64;
}

impl FlowValue for f64 {
    fn zeros_like(&self) -> Self {
        0.0
    }

    fn axpy(&mut self, s: f64, other: &Self) {
        *self += s * other;
    }

    fn norm(&self) -> f64 {
        self.abs()
    }
}

impl FlowValue for Matrix {
    fn zeros_like(&self) -> Self {
        Matrix::zeros(self.nrows(), self.ncols())
    }

    fn axpy(&mut self, s: f64, other: &Self) {
        *self += other * s;
    }

    fn norm(&self) -> f64 {
        // Frobenius
        Matrix::norm(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiState<T> {
    pub integral: T,
    pub estimate: T,
}

impl<T: FlowValue> PiState<T> {
    pub fn new(integral: T, estimate: T) -> Self {
        PiState { integral, estimate }
    }

    pub fn zeros_like(&self) -> Self {
        PiState {
            integral: self.integral.zeros_like(),
            estimate: self.estimate.zeros_like(),
        }
    }

    pub fn axpy(&mut self, s: f64, other: &Self) {
        self.integral.axpy(s, &other.integral);
        self.estimate.axpy(s, &other.estimate);
    }
}

impl PiState<Matrix> {
    pub fn zeros(n: usize) -> Self {
        PiState::new(Matrix::zeros(n, n), Matrix::zeros(n, n))
    }
}

impl PiState<f64> {
    pub fn zeros() -> Self {
        PiState::new(0.0, 0.0)
    }
}

/// States of all nodes of one flow, keyed by node id.
pub type PiNetwork<T> = BTreeMap<NodeId, PiState<T>>;

/// Scaling factor `k` and coupling gain `γ` of one flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub k: f64,
    pub gamma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { k: 1.0, gamma: 1.0 }
    }
}

impl FlowParams {
    pub fn new(k: f64, gamma: f64) -> Result<Self> {
        let p = FlowParams { k, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.gamma > 0.0 && self.k.is_finite() && self.gamma.is_finite()) {
            return Err(Error::Domain(format!(
                "flow parameters must be positive, got k = {}, gamma = {}",
                self.k, self.gamma
            )));
        }
        Ok(())
    }
}

/// Derivative for one node given its own state, the weighted neighbour states,
/// and its local drift (already scaled by `k`).
pub fn pi_agent_derivative<T: FlowValue>(
    own: &PiState<T>,
    neighbors: &[(&PiState<T>, f64)],
    drift: T,
    gamma: f64,
) -> PiState<T> {
    let mut dx = own.estimate.zeros_like();
    let mut dz = own.integral.zeros_like();
    for (nb, w) in neighbors {
        dx.axpy(*w, &nb.estimate);
        dx.axpy(-*w, &own.estimate);
        dz.axpy(*w, &nb.integral);
        dz.axpy(-*w, &own.integral);
    }
    // dx and dz now hold the two Laplacian sums
    let mut d_est = drift;
    d_est.axpy(gamma, &dx);
    d_est.axpy(gamma, &dz);
    let mut d_int = own.integral.zeros_like();
    d_int.axpy(-gamma, &dx);
    PiState {
        integral: d_int,
        estimate: d_est,
    }
}

/// Network derivative with per-node drift `drift(id, estimate)`.
pub fn pi_network_derivative<T, D>(
    g: &Graph,
    state: &PiNetwork<T>,
    gamma: f64,
    drift: D,
) -> Result<PiNetwork<T>>
where
    T: FlowValue,
    D: Fn(NodeId, &T) -> Result<T>,
{
    check_nodes(g, state)?;
    state
        .iter()
        .map(|(&id, own)| {
            let nbs: Vec<(&PiState<T>, f64)> = g
                .neighbors(id)
                .into_iter()
                .map(|(j, w)| (&state[&j], w))
                .collect();
            let d = drift(id, &own.estimate)?;
            Ok((id, pi_agent_derivative(own, &nbs, d, gamma)))
        })
        .collect()
}

fn check_nodes<T>(g: &Graph, state: &PiNetwork<T>) -> Result<()> {
    if g.len() != state.len() || state.keys().any(|&id| !g.contains(id)) {
        return Err(Error::dim(format!(
            "graph nodes {:?} do not match flow states {:?}",
            g.node_ids(),
            state.keys().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// `−(A+βI)X − X(A+βI)ᵀ + 2BᵢBᵢᵀ`, the unscaled local Bass drift.
pub fn bass_drift(a: &Matrix, b_i: &Matrix, beta: f64, x: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if x.nrows() != n || x.ncols() != n || b_i.nrows() != n {
        return Err(Error::dim(format!(
            "Bass drift: A is {n}x{n}, X is {}x{}, B_i has {} rows",
            x.nrows(),
            x.ncols(),
            b_i.nrows()
        )));
    }
    let s = a + matlib::identity(n) * beta;
    Ok(-(&s * x) - x * s.transpose() + b_i * b_i.transpose() * 2.0)
}

/// `−(Aᵀ+βI)Y − Y(Aᵀ+βI)ᵀ + 2CᵢᵀCᵢ`, the unscaled local dual drift.
pub fn dual_drift(a: &Matrix, c_i: &Matrix, beta: f64, y: &Matrix) -> Result<Matrix> {
    bass_drift(&a.transpose(), &c_i.transpose(), beta, y)
}

/// Distributed Bass flow; `inputs[i]` is agent `i`'s `Bᵢ`.
pub fn bass_flow_derivative(
    a: &Matrix,
    inputs: &BTreeMap<NodeId, Matrix>,
    beta: f64,
    params: FlowParams,
    g: &Graph,
    state: &PiNetwork<Matrix>,
) -> Result<PiNetwork<Matrix>> {
    pi_network_derivative(g, state, params.gamma, |id, x| {
        let b = inputs.get(&id).ok_or(Error::UnknownId(id))?;
        Ok(bass_drift(a, b, beta, x)? * params.k)
    })
}

/// Distributed dual flow; `outputs[i]` is agent `i`'s `Cᵢ`.
pub fn dual_flow_derivative(
    a: &Matrix,
    outputs: &BTreeMap<NodeId, Matrix>,
    beta: f64,
    params: FlowParams,
    g: &Graph,
    state: &PiNetwork<Matrix>,
) -> Result<PiNetwork<Matrix>> {
    pi_network_derivative(g, state, params.gamma, |id, y| {
        let c = outputs.get(&id).ok_or(Error::UnknownId(id))?;
        Ok(dual_drift(a, c, beta, y)? * params.k)
    })
}

/// Local size-estimator drift: `k_s` for agents, `−k_s ζ₀` for the informer.
pub fn size_drift(id: NodeId, zeta: f64, k: f64) -> f64 {
    if id == INFORMER {
        -k * zeta
    } else {
        k
    }
}

/// Network-size estimator over `g_bar`, which must contain the informer.
pub fn size_flow_derivative(
    params: FlowParams,
    g_bar: &Graph,
    state: &PiNetwork<f64>,
) -> Result<PiNetwork<f64>> {
    if !g_bar.contains(INFORMER) || !state.contains_key(&INFORMER) {
        return Err(Error::Precondition("size estimator needs informer node 0".into()));
    }
    pi_network_derivative(g_bar, state, params.gamma, |id, z| {
        Ok(size_drift(id, *z, params.k))
    })
}

/// `Ā = (−(A+βI)) ⊕ (−(A+βI))` and `P` with `PĀ + ĀᵀP = −2I`.
pub fn rate_lyapunov(a: &Matrix, beta: f64) -> Result<(Matrix, Matrix)> {
    matlib::ensure_square(a, "A")?;
    let n = a.nrows();
    let s = -(a + matlib::identity(n) * beta);
    let a_bar = matlib::kron_sum(&s, &s)?;
    let m = a_bar.nrows();
    let p = matlib::solve_lyapunov(&a_bar.transpose(), &(matlib::identity(m) * 2.0))?;
    if !matlib::is_positive_definite(&p) {
        return Err(Error::Precondition(format!(
            "-(A + {beta} I) is not Hurwitz, so the rate certificate does not exist"
        )));
    }
    Ok((a_bar, p))
}

struct RateConstants {
    p_max: f64,
    p_min: f64,
    root: f64,
}

fn rate_constants(a: &Matrix, beta: f64) -> Result<RateConstants> {
    let (a_bar, p) = rate_lyapunov(a, beta)?;
    let (vals, _) = matlib::symmetric_eigen(&p)?;
    let p_norm = matlib::induced_2norm(&p);
    let a_norm = matlib::induced_2norm(&a_bar);
    Ok(RateConstants {
        p_max: vals[vals.len() - 1],
        p_min: vals[0],
        root: (4.0 + p_norm * p_norm * a_norm * a_norm).sqrt(),
    })
}

/// Smallest `(k_c, γ_c)` that certify convergence rate `Δ` for the distributed
/// Bass flow (or its dual, when called with `Aᵀ`). `Δ ≤ 0` gives `(1, 1)`.
pub fn bass_rate_params(a: &Matrix, beta: f64, g: &Graph, delta: f64) -> Result<FlowParams> {
    if !(delta > 0.0) {
        return Ok(FlowParams::default());
    }
    let rc = rate_constants(a, beta)?;
    let l2 = g.lambda2()?;
    if !(l2 > 0.0) {
        return Err(Error::Disconnected);
    }
    let k = rc.p_max * delta;
    let gamma = (6.0 + rc.root) / (2.0 * l2 * rc.p_min) * k;
    Ok(FlowParams { k, gamma })
}

/// The rate `Δ` that given `(k_c, γ_c)` certify, or 0 when the coupling is too
/// weak for the certificate to apply.
pub fn certified_bass_rate(a: &Matrix, beta: f64, g: &Graph, params: FlowParams) -> Result<f64> {
    let rc = rate_constants(a, beta)?;
    let l2 = g.lambda2()?;
    let ratio = params.gamma / params.k;
    let c = 2.0 * params.k * (2.0 * ratio * l2 * rc.p_min + 2.0 - rc.root)
        / (rc.p_max * (5.0 + 5f64.sqrt()));
    if c <= 0.0 {
        return Ok(0.0);
    }
    Ok((params.k / rc.p_max).min(c / 2.0))
}

/// Smallest `(k_s, γ_s)` certifying rate `Δ` for the size estimator with `agents`
/// agents on `g_bar`. `γ_s` carries a relative slack of 1e−6 for the strict
/// inequality. `Δ ≤ 0` gives `(1, 1)`.
pub fn size_rate_params(agents: usize, g_bar: &Graph, delta: f64) -> Result<FlowParams> {
    if !(delta > 0.0) {
        return Ok(FlowParams::default());
    }
    let n = agents as f64;
    let k = (24.0 * n + 30.0 + 2.0 * 5f64.sqrt()) / (2.0 - 2f64.sqrt()) * delta;
    let l2 = g_bar.lambda2()?;
    if !(l2 > 0.0) {
        return Err(Error::Disconnected);
    }
    Ok(FlowParams {
        k,
        gamma: (n + 1.0) * k / l2 * (1.0 + 1e-6),
    })
}

/// Sum of the integral states; conserved by every flow on an undirected graph.
pub fn integral_sum<T: FlowValue>(state: &PiNetwork<T>) -> Option<T> {
    let mut it = state.values();
    let mut acc = it.next()?.integral.clone();
    for s in it {
        acc.axpy(1.0, &s.integral);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bass;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn di() -> (Matrix, Matrix) {
        (dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 1.0])
    }

    #[test]
    fn single_agent_reduces_to_lyapunov_flow() {
        let (a, b) = di();
        let g = Graph::with_nodes([1]);
        let xs = bass::bass_solve(&a, &b, 1.0).unwrap().x_star;
        let state = PiNetwork::from([(1, PiState::new(Matrix::zeros(2, 2), xs.clone()))]);
        let inputs = BTreeMap::from([(1, b.clone())]);
        let d = bass_flow_derivative(&a, &inputs, 1.0, FlowParams::default(), &g, &state).unwrap();
        assert!(d[&1].estimate.amax() < 1e-13);
        assert!(d[&1].integral.amax() == 0.0);
        // away from X*, the derivative is the k-scaled residual
        let state = PiNetwork::from([(1, PiState::<Matrix>::zeros(2))]);
        let p = FlowParams::new(2.0, 5.0).unwrap();
        let d = bass_flow_derivative(&a, &inputs, 1.0, p, &g, &state).unwrap();
        assert!((&d[&1].estimate - &b * b.transpose() * 4.0).amax() < 1e-15);
    }

    #[test]
    fn symmetric_pair_stays_symmetric() {
        let (a, b) = di();
        let g = Graph::path(&[1, 2]);
        let x0 = dmatrix![1.0, 0.2; 0.2, 3.0];
        let state = PiNetwork::from([
            (1, PiState::new(Matrix::zeros(2, 2), x0.clone())),
            (2, PiState::new(Matrix::zeros(2, 2), x0.clone())),
        ]);
        let inputs = BTreeMap::from([(1, b.clone()), (2, b.clone())]);
        let d = bass_flow_derivative(&a, &inputs, 1.0, FlowParams::default(), &g, &state).unwrap();
        assert_eq!(d[&1], d[&2]);
        assert_eq!(d[&1].integral, Matrix::zeros(2, 2));
    }

    #[test]
    fn dual_flow_is_bass_flow_on_transpose() {
        let a = dmatrix![0.0, 1.0; -1.0, 0.4];
        let c1 = dmatrix![1.0, 0.0];
        let c2 = dmatrix![0.3, 0.7];
        let g = Graph::path(&[1, 2]);
        let state = PiNetwork::from([
            (1, PiState::new(dmatrix![0.1, 0.0; 0.3, 0.2], dmatrix![1.0, 0.5; 0.5, 2.0])),
            (2, PiState::new(dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.4, 0.0; 0.0, 0.1])),
        ]);
        let p = FlowParams::new(1.5, 0.7).unwrap();
        let outs = BTreeMap::from([(1, c1.clone()), (2, c2.clone())]);
        let ins = BTreeMap::from([(1, c1.transpose()), (2, c2.transpose())]);
        let d1 = dual_flow_derivative(&a, &outs, 0.5, p, &g, &state).unwrap();
        let d2 = bass_flow_derivative(&a.transpose(), &ins, 0.5, p, &g, &state).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn size_estimator_plug_in() {
        // all zero, star around the informer
        let g = Graph::star(INFORMER, &[1, 2, 3]);
        let state: PiNetwork<f64> = (0..=3).map(|i| (i, PiState::<f64>::zeros())).collect();
        let d = size_flow_derivative(FlowParams::new(0.7, 2.0).unwrap(), &g, &state).unwrap();
        assert_eq!(d[&0].estimate, 0.0);
        for i in 1..=3 {
            assert_eq!(d[&i].estimate, 0.7);
            assert_eq!(d[&i].integral, 0.0);
        }
        let no_informer = Graph::path(&[1, 2]);
        let s2: PiNetwork<f64> = (1..=2).map(|i| (i, PiState::<f64>::zeros())).collect();
        assert!(size_flow_derivative(FlowParams::default(), &no_informer, &s2).is_err());
    }

    #[test]
    fn scalar_rate_params() {
        // A = 0, β = 1: Ā = [−2], P = 1/2
        let g = Graph::path(&[1, 2, 3]);
        let p = bass_rate_params(&dmatrix![0.0], 1.0, &g, 0.8).unwrap();
        assert!((p.k - 0.4).abs() < 1e-14);
        let coeff = (6.0 + 5f64.sqrt()) / (2.0 * 1.0 * 0.5);
        assert!((p.gamma - coeff * 0.4).abs() < 1e-12);
        let cert = certified_bass_rate(&dmatrix![0.0], 1.0, &g, p).unwrap();
        assert!((cert - 0.8).abs() < 1e-12);
        assert_eq!(bass_rate_params(&dmatrix![0.0], 1.0, &g, 0.0).unwrap(), FlowParams::default());
    }

    #[test]
    fn size_rate_params_arithmetic() {
        let g = Graph::path(&[0, 1]);
        let p = size_rate_params(1, &g, 1.0).unwrap();
        let k = (54.0 + 2.0 * 5f64.sqrt()) / (2.0 - 2f64.sqrt());
        assert!((p.k - k).abs() < 1e-12);
        assert!(p.gamma > 2.0 * k / 2.0);
        assert_eq!(size_rate_params(1, &g, 0.0).unwrap(), FlowParams::default());
    }

    fn random_network(seed: u64) -> (Graph, PiNetwork<Matrix>, BTreeMap<NodeId, Matrix>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<NodeId> = (1..=rng.gen_range(2..=6)).collect();
        let g = crate::instances::connected_graph(&mut rng, &ids, 0.3);
        let state = ids
            .iter()
            .map(|&i| {
                (
                    i,
                    PiState::new(
                        crate::instances::random_matrix(&mut rng, 3, 3, 2.0),
                        crate::instances::random_matrix(&mut rng, 3, 3, 2.0),
                    ),
                )
            })
            .collect();
        let inputs = ids
            .iter()
            .map(|&i| (i, crate::instances::random_matrix(&mut rng, 3, 1, 1.0)))
            .collect();
        (g, state, inputs)
    }

    proptest! {
        #[test]
        fn integral_sum_is_conserved(seed in 0u64..10_000, k in 0.1f64..5.0, gamma in 0.1f64..5.0) {
            let (g, state, inputs) = random_network(seed);
            let a = dmatrix![0.0, 1.0, 0.0; 0.0, 0.0, 1.0; -1.0, 0.5, 0.2];
            let d = bass_flow_derivative(&a, &inputs, 1.5, FlowParams { k, gamma }, &g, &state).unwrap();
            prop_assert!(integral_sum(&d).unwrap().amax() < 1e-12);
        }

        #[test]
        fn size_integral_is_conserved(seed in 0u64..10_000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ids: Vec<NodeId> = (0..=rng.gen_range(1..=8)).collect();
            let g = crate::instances::connected_graph(&mut rng, &ids, 0.3);
            let state: PiNetwork<f64> = ids
                .iter()
                .map(|&i| (i, PiState::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))))
                .collect();
            let d = size_flow_derivative(FlowParams::default(), &g, &state).unwrap();
            prop_assert!(integral_sum(&d).unwrap().abs() < 1e-12);
        }
    }
}
