//! Numerical certificates for the stability arguments: the closed loop in
//! error coordinates `(x, ē, ẽ)`, the block bounds, the Lyapunov weights, and
//! the equilibria of the consensus flows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bass::{self, StaticGains, ThresholdCertificate};
use crate::consensus::{self, FlowParams, PiNetwork, INFORMER};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::matlib::{self, Matrix, Vector};
use crate::plant::PlantModel;

/// The closed loop of the plant and `N` observer agents with static gains,
/// written in the coordinates `x`, `ē = (1/N)(1ᵀ⊗I)e`, `ẽ = (Rᵀ⊗I)e` where
/// `eᵢ = x̂ᵢ − x`.
#[derive(Clone, Debug)]
pub struct ClosedLoopDecomposition {
    pub n: usize,
    pub agents: usize,
    pub gamma: f64,
    pub g: Matrix,
    pub h: Matrix,
    pub box1: Matrix,
    pub box2: Matrix,
    pub box3: Matrix,
    pub box4: Matrix,
    pub box5: Matrix,
    pub r: Matrix,
    pub lambda_plus: Matrix,
    /// `[[A+BF, BF, □₁], [0, A+LC, □₂], [□₃, □₄, □₅ − γ(Λ⁺⊗I)]]`.
    pub assembled: Matrix,
}

struct LoopParts {
    n: usize,
    agents: usize,
    a: Matrix,
    b: Vec<Matrix>,
    c: Vec<Matrix>,
    f: Vec<Matrix>,
    l: Vec<Matrix>,
}

fn loop_parts(p: &PlantModel, gains: &StaticGains, g: &Graph) -> Result<LoopParts> {
    let ids: Vec<NodeId> = g.node_ids();
    if ids != gains.f.keys().copied().collect::<Vec<_>>() || ids != gains.l.keys().copied().collect::<Vec<_>>() {
        return Err(Error::dim("graph nodes, F ids and L ids must coincide"));
    }
    let mut parts = LoopParts {
        n: p.n(),
        agents: ids.len(),
        a: p.a.clone(),
        b: vec![],
        c: vec![],
        f: vec![],
        l: vec![],
    };
    for id in &ids {
        let ch = p.channel(*id)?;
        let (f, l) = (&gains.f[id], &gains.l[id]);
        if f.nrows() != ch.inputs() || f.ncols() != parts.n || l.nrows() != parts.n || l.ncols() != ch.outputs() {
            return Err(Error::dim(format!("gains of agent {id} do not match its channel")));
        }
        parts.b.push(ch.input.clone());
        parts.c.push(ch.output.clone());
        parts.f.push(f.clone());
        parts.l.push(l.clone());
    }
    Ok(parts)
}

/// Builds the decomposition; the graph's nodes are the agents.
pub fn closed_loop_matrix(
    p: &PlantModel,
    gains: &StaticGains,
    gamma: f64,
    g: &Graph,
) -> Result<ClosedLoopDecomposition> {
    let lp = loop_parts(p, gains, g)?;
    let (n, nn) = (lp.n, lp.agents);
    let nf = nn as f64;
    let (r, lambda_plus) = g.r_matrix()?;
    let eye = matlib::identity(n);
    let bf_i: Vec<Matrix> = lp.b.iter().zip(&lp.f).map(|(b, f)| b * f).collect();
    let lc_i: Vec<Matrix> = lp.l.iter().zip(&lp.c).map(|(l, c)| l * c).collect();
    let bf: Matrix = bf_i.iter().fold(Matrix::zeros(n, n), |acc, m| acc + m);
    let lc: Matrix = lc_i.iter().fold(Matrix::zeros(n, n), |acc, m| acc + m);

    let bf_row = matlib::hcat(n, &bf_i.iter().collect::<Vec<_>>())?;
    let diag_obs = matlib::block_diag(
        &lc_i.iter().map(|lc| &lp.a + lc * nf).collect::<Vec<_>>(),
    );
    let diag_full = matlib::block_diag(
        &lc_i
            .iter()
            .zip(&bf_i)
            .map(|(lc, bf)| &lp.a + lc * nf + bf * nf)
            .collect::<Vec<_>>(),
    );
    let ones = Matrix::from_element(nn, 1, 1.0);
    let g_mat = diag_full - matlib::kron(&ones, &bf_row);
    let h_blocks: Vec<Matrix> = bf_i.iter().map(|m| m * nf - &bf).collect();
    let h = matlib::vcat(n, &h_blocks.iter().collect::<Vec<_>>())?;

    let ri = matlib::kron(&r, &eye);
    let oi = matlib::kron(&ones, &eye);
    let avg = matlib::kron(&ones.transpose(), &eye) / nf;
    let box1 = &bf_row * &ri;
    let box2 = &avg * &diag_obs * &ri;
    let box3 = ri.transpose() * &h;
    let box4 = ri.transpose() * &g_mat * &oi;
    let box5 = ri.transpose() * &g_mat * &ri;

    let m = (nn - 1) * n;
    let dim = 2 * n + m;
    let mut asm = Matrix::zeros(dim, dim);
    asm.view_mut((0, 0), (n, n)).copy_from(&(&lp.a + &bf));
    asm.view_mut((0, n), (n, n)).copy_from(&bf);
    asm.view_mut((n, n), (n, n)).copy_from(&(&lp.a + &lc));
    if m > 0 {
        asm.view_mut((0, 2 * n), (n, m)).copy_from(&box1);
        asm.view_mut((n, 2 * n), (n, m)).copy_from(&box2);
        asm.view_mut((2 * n, 0), (m, n)).copy_from(&box3);
        asm.view_mut((2 * n, n), (m, n)).copy_from(&box4);
        let coupled = &box5 - matlib::kron(&lambda_plus, &eye) * gamma;
        asm.view_mut((2 * n, 2 * n), (m, m)).copy_from(&coupled);
    }
    Ok(ClosedLoopDecomposition {
        n,
        agents: nn,
        gamma,
        g: g_mat,
        h,
        box1,
        box2,
        box3,
        box4,
        box5,
        r,
        lambda_plus,
        assembled: asm,
    })
}

/// The closed loop in the original coordinates `(x, x̂₁, …, x̂_N)`: plant
/// driven by `uᵢ = Fᵢx̂ᵢ`, agents running the observer with fixed `N` and `γ`.
pub fn flat_closed_loop(p: &PlantModel, gains: &StaticGains, gamma: f64, g: &Graph) -> Result<Matrix> {
    let lp = loop_parts(p, gains, g)?;
    let (n, nn) = (lp.n, lp.agents);
    let nf = nn as f64;
    let lap = g.laplacian();
    let dim = n * (nn + 1);
    let mut m = Matrix::zeros(dim, dim);
    m.view_mut((0, 0), (n, n)).copy_from(&lp.a);
    for i in 0..nn {
        let bf = &lp.b[i] * &lp.f[i];
        let lc = &lp.l[i] * &lp.c[i];
        let row = n * (i + 1);
        m.view_mut((0, row), (n, n)).copy_from(&bf);
        m.view_mut((row, 0), (n, n)).copy_from(&(-&lc * nf));
        for j in 0..nn {
            let col = n * (j + 1);
            let mut blk = matlib::identity(n) * (-gamma * lap[(i, j)]);
            if i == j {
                blk += &lp.a + bf.clone() * nf + lc.clone() * nf;
            }
            m.view_mut((row, col), (n, n)).copy_from(&blk);
        }
    }
    Ok(m)
}

/// The linear map from `(x, x̂₁, …, x̂_N)` to `(x, ē, ẽ)`.
pub fn error_coordinates(n: usize, r: &Matrix) -> Matrix {
    let nn = r.nrows();
    let nf = nn as f64;
    let eye = matlib::identity(n);
    let dim = n * (nn + 1);
    // first e = x̂ − 1⊗x
    let mut to_e = matlib::identity(dim);
    for i in 0..nn {
        to_e.view_mut((n * (i + 1), 0), (n, n)).copy_from(&(-&eye));
    }
    let mut proj = Matrix::zeros(dim, dim);
    proj.view_mut((0, 0), (n, n)).copy_from(&eye);
    let ones = Matrix::from_element(1, nn, 1.0 / nf);
    proj.view_mut((n, n), (n, nn * n)).copy_from(&matlib::kron(&ones, &eye));
    if nn > 1 {
        proj.view_mut((2 * n, n), ((nn - 1) * n, nn * n))
            .copy_from(&matlib::kron(&r.transpose(), &eye));
    }
    proj * to_e
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockBoundReport {
    pub theta: f64,
    pub max_f: f64,
    pub checks: Vec<BoundCheck>,
}

impl BlockBoundReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Compares the block norms to `‖□₁‖² ≤ N max‖Fᵢ‖²`, `‖□₃‖² ≤ 4N³ max‖Fᵢ‖²`,
/// `‖□₂‖ ≤ θ/√N`, `‖□₄‖ ≤ √N θ`, `‖□₅‖ ≤ θ` (relative slack 1e−9).
pub fn verify_block_bounds(d: &ClosedLoopDecomposition, p: &PlantModel, gains: &StaticGains) -> BlockBoundReport {
    let nf = d.agents as f64;
    let theta = bass::theta(&p.a, gains);
    let max_f = gains.max_f_norm();
    let norm = matlib::induced_2norm;
    let raw = [
        ("box1^2", norm(&d.box1).powi(2), nf * max_f * max_f),
        ("box2", norm(&d.box2), theta / nf.sqrt()),
        ("box3^2", norm(&d.box3).powi(2), 4.0 * nf.powi(3) * max_f * max_f),
        ("box4", norm(&d.box4), nf.sqrt() * theta),
        ("box5", norm(&d.box5), theta),
    ];
    BlockBoundReport {
        theta,
        max_f,
        checks: raw
            .into_iter()
            .map(|(name, lhs, rhs)| BoundCheck {
                name: name.into(),
                lhs,
                rhs,
                pass: lhs <= rhs * (1.0 + 1e-9) + 1e-12,
            })
            .collect(),
    }
}

/// Weights of the composite Lyapunov function
/// `V = ½(xᵀM₁x + φ̄ ēᵀM₂ē + φ̃|ẽ|²)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LyapunovWeights {
    pub delta: f64,
    pub epsilon: f64,
    pub phi_bar: f64,
    pub phi_tilde: f64,
}

pub fn lyapunov_weights(cert: &ThresholdCertificate) -> Result<LyapunovWeights> {
    let delta = matlib::lambda_max_sym(&cert.m1)?.max(matlib::lambda_max_sym(&cert.m2)?);
    let epsilon = matlib::lambda_min_sym(&cert.q1)?.min(matlib::lambda_min_sym(&cert.q2)?);
    let nf = cert.agents as f64;
    let th = cert.theta;
    let phi_tilde = delta / (2.0 * nf) * (1.0 + th * th * delta * delta / (epsilon * epsilon)).sqrt();
    let phi_bar = 2.0 * delta * delta * nf * nf * cert.max_f * cert.max_f / (epsilon * epsilon) + phi_tilde * nf / delta;
    Ok(LyapunovWeights {
        delta,
        epsilon,
        phi_bar,
        phi_tilde,
    })
}

impl LyapunovWeights {
    /// `V` at a point `z = (x, ē, ẽ)`.
    pub fn value(&self, cert: &ThresholdCertificate, z: &Vector) -> f64 {
        let n = cert.m1.nrows();
        let x = z.rows(0, n);
        let eb = z.rows(n, n);
        let et = z.rows(2 * n, z.len() - 2 * n);
        0.5 * ((x.transpose() * &cert.m1 * x)[(0, 0)]
            + self.phi_bar * (eb.transpose() * &cert.m2 * eb)[(0, 0)]
            + self.phi_tilde * et.norm_squared())
    }

    /// Symmetric matrix `S` with `V(z) = ½ zᵀ S z`.
    pub fn matrix(&self, cert: &ThresholdCertificate, dim: usize) -> Matrix {
        let n = cert.m1.nrows();
        let mut s = matlib::identity(dim) * self.phi_tilde;
        s.view_mut((0, 0), (n, n)).copy_from(&cert.m1);
        s.view_mut((n, n), (n, n)).copy_from(&(&cert.m2 * self.phi_bar));
        s
    }
}

/// Smallest coupling gain in `[0, upper]` (to relative accuracy `rtol`) for
/// which the assembled matrix is Hurwitz, assuming stability is monotone in γ
/// above it. `None` when `upper` itself is not stabilizing.
pub fn critical_gamma(p: &PlantModel, gains: &StaticGains, g: &Graph, upper: f64, rtol: f64) -> Result<Option<f64>> {
    let hurwitz = |gamma: f64| -> Result<bool> {
        Ok(matlib::is_hurwitz(&closed_loop_matrix(p, gains, gamma, g)?.assembled, 0.0))
    };
    if !hurwitz(upper)? {
        return Ok(None);
    }
    if hurwitz(0.0)? {
        return Ok(Some(0.0));
    }
    let (mut lo, mut hi) = (0.0, upper);
    while hi - lo > rtol * hi {
        let mid = 0.5 * (lo + hi);
        if hurwitz(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Equilibrium of the vectorized distributed Bass flow in transformed
/// coordinates: `(ν̃*, χ̄*)`.
pub fn bass_equilibria(
    a: &Matrix,
    inputs: &BTreeMap<NodeId, Matrix>,
    beta: f64,
    params: FlowParams,
    g: &Graph,
) -> Result<(Vector, Vector)> {
    let ids = g.node_ids();
    let n = a.nrows();
    let n2 = n * n;
    let nn = ids.len();
    let mut w = Vector::zeros(nn * n2);
    let mut mean = Vector::zeros(n2);
    for (k, id) in ids.iter().enumerate() {
        let b = inputs.get(id).ok_or(Error::UnknownId(*id))?;
        let v = matlib::vec(&(b * b.transpose() * 2.0));
        w.rows_mut(k * n2, n2).copy_from(&v);
        mean += v / nn as f64;
    }
    let (a_bar, _) = consensus::rate_lyapunov(a, beta)?;
    let chi_bar = -(matlib::inverse(&a_bar)? * mean);
    let (r, lam) = g.r_matrix()?;
    let nu_tilde = if nn > 1 {
        let lam_inv = Matrix::from_diagonal(&lam.diagonal().map(|v| 1.0 / v));
        let eye = matlib::identity(n2);
        (matlib::kron(&lam_inv, &eye) * matlib::kron(&r.transpose(), &eye) * w) * (params.k / params.gamma)
    } else {
        Vector::zeros(0)
    };
    Ok((nu_tilde, chi_bar))
}

/// `(ν̄, ν̃, χ̄, χ̃)` of a matrix-valued PI network.
pub fn transformed_coordinates(state: &PiNetwork<Matrix>, g: &Graph) -> Result<(Vector, Vector, Vector, Vector)> {
    let ids = g.node_ids();
    let nn = ids.len();
    let first = state.values().next().ok_or_else(|| Error::dim("empty network"))?;
    let n2 = first.estimate.len();
    let mut nu = Vector::zeros(nn * n2);
    let mut chi = Vector::zeros(nn * n2);
    for (k, id) in ids.iter().enumerate() {
        let s = state.get(id).ok_or(Error::UnknownId(*id))?;
        nu.rows_mut(k * n2, n2).copy_from(&matlib::vec(&s.integral));
        chi.rows_mut(k * n2, n2).copy_from(&matlib::vec(&s.estimate));
    }
    let (r, _) = g.r_matrix()?;
    let eye = matlib::identity(n2);
    let avg = matlib::kron(&Matrix::from_element(1, nn, 1.0 / nn as f64), &eye);
    let rt = matlib::kron(&r.transpose(), &eye);
    Ok((&avg * &nu, &rt * &nu, &avg * &chi, &rt * &chi))
}

/// Per-node integral states `Zᵢ` with zero average whose transformed value is
/// `ν̃`; used to start a flow at its equilibrium.
pub fn integrals_from_tilde(nu_tilde: &Vector, g: &Graph, n: usize) -> Result<BTreeMap<NodeId, Matrix>> {
    let (r, _) = g.r_matrix()?;
    let ids = g.node_ids();
    let n2 = n * n;
    let nu = if ids.len() > 1 {
        matlib::kron(&r, &matlib::identity(n2)) * nu_tilde
    } else {
        Vector::zeros(n2)
    };
    ids.iter()
        .enumerate()
        .map(|(k, &id)| Ok((id, matlib::unvec(&nu.rows(k * n2, n2).into_owned(), n, n)?)))
        .collect()
}

/// Equilibrium of the size estimator on `g_bar` (informer included):
/// `ζ̄* = N` and `ψ̃* = (k_s/γ_s)(Λ̄⁺)⁻¹R̄ᵀ(w − NJ1)`.
pub fn size_equilibrium(params: FlowParams, g_bar: &Graph) -> Result<(f64, Vector)> {
    let ids = g_bar.node_ids();
    if ids.first() != Some(&INFORMER) {
        return Err(Error::Precondition("size estimator needs informer node 0".into()));
    }
    let agents = ids.len() - 1;
    let nf = agents as f64;
    let (r, lam) = g_bar.r_matrix()?;
    // w − N·J·1 = [−N, 1, …, 1]
    let mut d = Vector::from_element(agents + 1, 1.0);
    d[0] = -nf;
    let lam_inv = Matrix::from_diagonal(&lam.diagonal().map(|v| 1.0 / v));
    let psi_tilde = lam_inv * r.transpose() * d * (params.k / params.gamma);
    Ok((nf, psi_tilde))
}

/// Node states `(ψᵢ, ζᵢ)` at the size-estimator equilibrium with `ψ̄ = 0`.
pub fn size_equilibrium_state(params: FlowParams, g_bar: &Graph) -> Result<PiNetwork<f64>> {
    let (zeta, psi_tilde) = size_equilibrium(params, g_bar)?;
    let (r, _) = g_bar.r_matrix()?;
    let psi = r * psi_tilde;
    Ok(g_bar
        .node_ids()
        .into_iter()
        .enumerate()
        .map(|(k, id)| (id, consensus::PiState::new(psi[k], zeta)))
        .collect())
}

/// Least-squares exponential rate `−d/dt ln v` over the samples with `t ≥ t_from`.
/// Nonpositive or non-finite samples are skipped; `None` without two usable points.
pub fn fit_decay_rate(samples: &[(f64, f64)], t_from: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(t, v)| *t >= t_from && *v > 0.0 && v.is_finite())
        .map(|&(t, v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t, b + y));
    let (tm, ym) = (st / m, sy / m);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |(n, d), (t, y)| (n + (t - tm) * (y - ym), d + (t - tm) * (t - tm)));
    if den == 0.0 {
        return None;
    }
    Some(-num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bass::bass_design;
    use crate::consensus::PiState;
    use crate::instances;
    use crate::plant::{self, Channel};
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn load3() -> (PlantModel, Graph, bass::BassDesign) {
        let p = plant::load::plant(&[(1, 0.3), (2, 0.3 + 2.1), (3, 0.3 + 4.2)], 1.0).unwrap();
        let g = Graph::ring(&[1, 2, 3]);
        let d = bass_design(&p, &BTreeSet::from([1, 2, 3]), 0.25).unwrap();
        (p, g, d)
    }

    #[test]
    fn single_agent_is_classical_separation() {
        let p = PlantModel::with_channels(
            dmatrix![0.0, 1.0; 0.0, 0.0],
            [Channel::new(1, dmatrix![0.0; 1.0], dmatrix![1.0, 0.0])],
        )
        .unwrap();
        let d = bass_design(&p, &BTreeSet::from([1]), 1.0).unwrap();
        let dec = closed_loop_matrix(&p, &d.gains, 3.0, &Graph::with_nodes([1])).unwrap();
        assert_eq!(dec.assembled.nrows(), 4);
        let (b, c) = p.aggregate_all().unwrap();
        let (f, l) = d.gains.aggregate(2).unwrap();
        let bf = &b * &f;
        let expected = matlib::vcat(
            4,
            &[
                &matlib::hcat(2, &[&(&p.a + &bf), &bf]).unwrap(),
                &matlib::hcat(2, &[&Matrix::zeros(2, 2), &(&p.a + &l * &c)]).unwrap(),
            ],
        )
        .unwrap();
        assert!((&dec.assembled - expected).amax() < 1e-14);
    }

    #[test]
    fn assembled_equals_transformed_flat_loop() {
        let (p, g, d) = load3();
        let dec = closed_loop_matrix(&p, &d.gains, 7.0, &g).unwrap();
        let flat = flat_closed_loop(&p, &d.gains, 7.0, &g).unwrap();
        let t = error_coordinates(4, &dec.r);
        let t_inv = matlib::inverse(&t).unwrap();
        let diff = (&t * flat * t_inv - &dec.assembled).amax();
        assert!(diff < 1e-10, "{diff}");
        assert_eq!(dec.assembled.view((4, 0), (4, 4)).amax(), 0.0);
    }

    #[test]
    fn spectra_match_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (p, beta) = instances::random_plant(&mut rng, 4, 5, (0.25, 1.0));
            let ids = instances::active_ids(&p);
            let g = instances::connected_graph(&mut rng, &ids.iter().copied().collect::<Vec<_>>(), 0.3);
            let d = bass_design(&p, &ids, beta).unwrap();
            let dec = closed_loop_matrix(&p, &d.gains, 2.5, &g).unwrap();
            let flat = flat_closed_loop(&p, &d.gains, 2.5, &g).unwrap();
            let s1 = matlib::eigenvalues(&dec.assembled).unwrap();
            let s2 = matlib::eigenvalues(&flat).unwrap();
            let scale = matlib::induced_2norm(&flat).max(1.0);
            assert!(s1.matches(&s2, 1e-7 * scale));
        }
    }

    #[test]
    fn threshold_gives_hurwitz_on_load_instance() {
        let (p, g, d) = load3();
        let cert = bass::bass_threshold(&p, &d, &g).unwrap();
        let dec = closed_loop_matrix(&p, &d.gains, 1.01 * cert.gamma_min, &g).unwrap();
        assert!(matlib::is_hurwitz(&dec.assembled, 0.0));
        let crit = critical_gamma(&p, &d.gains, &g, 1.01 * cert.gamma_min, 1e-6).unwrap().unwrap();
        assert!(crit <= cert.gamma_min);
        assert!(verify_block_bounds(&dec, &p, &d.gains).all_pass());
    }

    #[test]
    fn zero_gains_bounds() {
        let (p, g, d) = load3();
        let mut gains = d.gains.clone();
        for f in gains.f.values_mut() {
            f.fill(0.0);
        }
        let dec = closed_loop_matrix(&p, &gains, 1.0, &g).unwrap();
        assert_eq!(dec.box1.amax(), 0.0);
        assert_eq!(dec.box3.amax(), 0.0);
        assert!(verify_block_bounds(&dec, &p, &gains).all_pass());
    }

    #[test]
    fn random_block_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (p, beta) = instances::random_plant(&mut rng, 4, 6, (0.1, 1.0));
            let ids = instances::active_ids(&p);
            let g = instances::connected_graph(&mut rng, &ids.iter().copied().collect::<Vec<_>>(), 0.4);
            let d = bass_design(&p, &ids, beta).unwrap();
            let dec = closed_loop_matrix(&p, &d.gains, 1.0, &g).unwrap();
            let rep = verify_block_bounds(&dec, &p, &d.gains);
            assert!(rep.all_pass(), "{rep:?}");
        }
    }

    #[test]
    fn lyapunov_weights_positive() {
        let (p, g, d) = load3();
        let cert = bass::bass_threshold(&p, &d, &g).unwrap();
        let w = lyapunov_weights(&cert).unwrap();
        assert!(w.phi_bar > 0.0 && w.phi_tilde > 0.0);
        let z = Vector::from_element(4 * 4, 1.0);
        let s = w.matrix(&cert, 16);
        let v = w.value(&cert, &z);
        assert!((v - 0.5 * (z.transpose() * s * &z)[(0, 0)]).abs() < 1e-12 * v);
    }

    #[test]
    fn bass_equilibrium_matches_centralized() {
        let (p, g, _) = load3();
        let inputs: BTreeMap<_, _> = p.channels.iter().map(|(&id, c)| (id, c.input.clone())).collect();
        let params = FlowParams::new(1.3, 0.8).unwrap();
        let (nu_t, chi_bar) = bass_equilibria(&p.a, &inputs, 0.25, params, &g).unwrap();
        let (b, _) = p.aggregate_all().unwrap();
        let xs = bass::bass_solve(&p.a, &b, 0.25).unwrap().x_star;
        let x_bar = matlib::unvec(&chi_bar, 4, 4).unwrap();
        assert!((x_bar - &xs / 3.0).amax() < 1e-10);

        // the flow derivative vanishes at the equilibrium
        let z = integrals_from_tilde(&nu_t, &g, 4).unwrap();
        let state: PiNetwork<Matrix> = z
            .into_iter()
            .map(|(id, zi)| (id, PiState::new(zi, &xs / 3.0)))
            .collect();
        let d = consensus::bass_flow_derivative(&p.a, &inputs, 0.25, params, &g, &state).unwrap();
        for s in d.values() {
            assert!(s.estimate.amax() < 1e-10 && s.integral.amax() < 1e-12);
        }
    }

    #[test]
    fn identical_channels_give_zero_nu_tilde() {
        let b = dmatrix![0.0; 1.0];
        let inputs = BTreeMap::from([(1, b.clone()), (2, b.clone()), (3, b)]);
        let (nu_t, _) = bass_equilibria(
            &dmatrix![0.0, 1.0; 0.0, 0.0],
            &inputs,
            1.0,
            FlowParams::default(),
            &Graph::path(&[1, 2, 3]),
        )
        .unwrap();
        assert!(nu_t.amax() < 1e-14);
    }

    #[test]
    fn size_equilibrium_two_nodes() {
        // N = 1: R̄ = [1/√2, −1/√2]ᵀ, Λ̄⁺ = 2, ψ̃* = (k/γ)(1/2)(−1/√2 − 1/√2)
        let params = FlowParams::new(2.0, 3.0).unwrap();
        let g = Graph::path(&[0, 1]);
        let (zeta, psi_t) = size_equilibrium(params, &g).unwrap();
        assert_eq!(zeta, 1.0);
        assert!((psi_t[0] + 2.0 / (3.0 * 2f64.sqrt())).abs() < 1e-14);
        let st = size_equilibrium_state(params, &g).unwrap();
        assert!((st[&0].integral + 2.0 / 3.0 * 0.5).abs() < 1e-14);
        assert!((st[&1].integral - 2.0 / 3.0 * 0.5).abs() < 1e-14);
    }

    #[test]
    fn size_equilibrium_is_fixed_point() {
        for g in [
            Graph::star(0, &[1, 2, 3, 4]),
            Graph::ring(&[0, 1, 2, 3, 4, 5]),
            Graph::path(&[0, 1, 2, 3]),
        ] {
            let params = FlowParams::new(1.7, 0.9).unwrap();
            let st = size_equilibrium_state(params, &g).unwrap();
            let d = consensus::size_flow_derivative(params, &g, &st).unwrap();
            for s in d.values() {
                assert!(s.estimate.abs() < 1e-12 && s.integral.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decay_fit() {
        let s: Vec<(f64, f64)> = (0..100).map(|k| (k as f64 * 0.1, 3.0 * (-0.7 * k as f64 * 0.1).exp())).collect();
        assert!((fit_decay_rate(&s, 0.0).unwrap() - 0.7).abs() < 1e-12);
        assert!(fit_decay_rate(&s[..1], 0.0).is_none());
    }
}
