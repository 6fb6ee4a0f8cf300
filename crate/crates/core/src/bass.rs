//! Centralized Bass gain synthesis, its dual, decay certificates and the
//! coupling-gain threshold for the distributed observer.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, Graph, NodeId};
use crate::matlib::{self, Matrix, Vector};
use crate::plant::{self, PlantModel};

/// Relative residual accepted for the shifted Lyapunov equations.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BassSolution {
    pub beta: f64,
    #[serde(with = "matlib::rows")]
    pub x_star: Matrix,
    #[serde(with = "matlib::rows")]
    pub x_inv: Matrix,
    /// Aggregate gain `F = −BᵀX*⁻¹`.
    #[serde(with = "matlib::rows")]
    pub f: Matrix,
}

impl BassSolution {
    /// Per-channel gain `Fᵢ = −BᵢᵀX*⁻¹`.
    pub fn channel_gain(&self, b_i: &Matrix) -> Matrix {
        -(b_i.transpose() * &self.x_inv)
    }

    /// `√(λmax(X*⁻¹)/λmin(X*⁻¹))`, the constant in the decay envelope.
    pub fn envelope_constant(&self) -> Result<f64> {
        let (vals, _) = matlib::symmetric_eigen(&self.x_inv)?;
        Ok((vals[vals.len() - 1] / vals[0]).sqrt())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualBassSolution {
    pub beta: f64,
    #[serde(with = "matlib::rows")]
    pub y_star: Matrix,
    #[serde(with = "matlib::rows")]
    pub y_inv: Matrix,
    /// Aggregate injection `L = −Y*⁻¹Cᵀ`.
    #[serde(with = "matlib::rows")]
    pub l: Matrix,
}

impl DualBassSolution {
    /// Per-channel injection `Lᵢ = −Y*⁻¹Cᵢᵀ`.
    pub fn channel_injection(&self, c_i: &Matrix) -> Matrix {
        -(&self.y_inv * c_i.transpose())
    }
}

/// Checks `β > max{0, −r(A)}`.
pub fn check_beta(a: &Matrix, beta: f64) -> Result<()> {
    let r = matlib::min_real_part(a)?;
    let bound = 0.0_f64.max(-r);
    if !(beta > bound) || !beta.is_finite() {
        return Err(Error::Precondition(format!(
            "beta = {beta} must exceed max(0, -r(A)) = {bound}"
        )));
    }
    Ok(())
}

/// `X*` solving `−(A+βI)X − X(A+βI)ᵀ + 2BBᵀ = 0`.
fn shifted_gramian(a: &Matrix, b: &Matrix, beta: f64) -> Result<Matrix> {
    matlib::ensure_square(a, "A")?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::dim(format!("B has {} rows, A is {n}x{n}", b.nrows())));
    }
    check_beta(a, beta)?;
    let shifted = -(a + matlib::identity(n) * beta);
    let q = b * b.transpose() * 2.0;
    let x = matlib::solve_lyapunov(&shifted, &q)?;
    let res = matlib::lyapunov_residual(&shifted, &x, &q);
    if res > RESIDUAL_TOL {
        return Err(Error::NumericFailure(format!(
            "shifted Lyapunov residual {res:.3e}"
        )));
    }
    let (vals, _) = matlib::symmetric_eigen(&x)?;
    let (lmin, lmax) = (vals[0], vals[n - 1]);
    if !(lmin > matlib::SINGULAR_RTOL * lmax) {
        return Err(Error::Precondition(format!(
            "pair (A, B) is not controllable: lambda_min(X*) = {lmin:.3e}"
        )));
    }
    Ok(x)
}

/// Bass' algorithm: `A + BF` has every eigenvalue with real part ≤ −β.
pub fn bass_solve(a: &Matrix, b: &Matrix, beta: f64) -> Result<BassSolution> {
    let x_star = shifted_gramian(a, b, beta)?;
    let x_inv = matlib::symmetrize(&matlib::inverse(&x_star)?);
    let f = -(b.transpose() * &x_inv);
    Ok(BassSolution {
        beta,
        x_star,
        x_inv,
        f,
    })
}

/// Like [`bass_solve`] but runs the Kalman rank test first.
pub fn bass_solve_checked(a: &Matrix, b: &Matrix, beta: f64) -> Result<BassSolution> {
    if !plant::is_controllable(a, b) {
        return Err(Error::Precondition("pair (A, B) is not controllable".into()));
    }
    bass_solve(a, b, beta)
}

/// Dual design: `A + LC` has every eigenvalue with real part ≤ −β.
pub fn dual_bass_solve(a: &Matrix, c: &Matrix, beta: f64) -> Result<DualBassSolution> {
    let y_star = shifted_gramian(&a.transpose(), &c.transpose(), beta)?;
    let y_inv = matlib::symmetrize(&matlib::inverse(&y_star)?);
    let l = -(&y_inv * c.transpose());
    Ok(DualBassSolution {
        beta,
        y_star,
        y_inv,
        l,
    })
}

/// Per-channel static gains for a fixed agent set.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StaticGains {
    #[serde(with = "gain_map")]
    pub f: BTreeMap<NodeId, Matrix>,
    #[serde(with = "gain_map")]
    pub l: BTreeMap<NodeId, Matrix>,
}

pub(crate) mod gain_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        id: NodeId,
        #[serde(with = "matlib::rows")]
        gain: Matrix,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<NodeId, Matrix>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(|(&id, g)| Entry {
            id,
            gain: g.clone(),
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<NodeId, Matrix>, D::Error> {
        let v: Vec<Entry> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|e| (e.id, e.gain)).collect())
    }
}

impl StaticGains {
    pub fn max_f_norm(&self) -> f64 {
        self.f.values().map(matlib::induced_2norm).fold(0.0, f64::max)
    }

    pub fn max_l_norm(&self) -> f64 {
        self.l.values().map(matlib::induced_2norm).fold(0.0, f64::max)
    }

    /// Stacked `F = [F₁; …; F_N]` and `L = [L₁ … L_N]` in id order.
    pub fn aggregate(&self, n: usize) -> Result<(Matrix, Matrix)> {
        let fs: Vec<&Matrix> = self.f.values().collect();
        let ls: Vec<&Matrix> = self.l.values().collect();
        Ok((matlib::vcat(n, &fs)?, matlib::hcat(n, &ls)?))
    }
}

/// Bass gains and their dual for the active channels of a plant.
#[derive(Clone, Debug)]
pub struct BassDesign {
    pub primal: BassSolution,
    pub dual: DualBassSolution,
    pub gains: StaticGains,
}

impl BassDesign {
    /// `(M₁, Q₁, M₂, Q₂) = (X*⁻¹, βX*⁻¹, Y*, βY*)`.
    pub fn certificate_matrices(&self) -> (Matrix, Matrix, Matrix, Matrix) {
        let beta = self.primal.beta;
        (
            self.primal.x_inv.clone(),
            &self.primal.x_inv * beta,
            self.dual.y_star.clone(),
            &self.dual.y_star * beta,
        )
    }
}

pub fn bass_design(p: &PlantModel, active: &BTreeSet<NodeId>, beta: f64) -> Result<BassDesign> {
    let (b, c) = p.aggregate(active)?;
    let primal = bass_solve(&p.a, &b, beta)?;
    let dual = dual_bass_solve(&p.a, &c, beta)?;
    let mut gains = StaticGains::default();
    for &id in active {
        let ch = p.channel(id)?;
        gains.f.insert(id, primal.channel_gain(&ch.input));
        gains.l.insert(id, dual.channel_injection(&ch.output));
    }
    Ok(BassDesign {
        primal,
        dual,
        gains,
    })
}

/// Checks `‖x(t)‖ ≤ c·e^{−rate·(t−t₀)}‖x(t₀)‖ + 1e−6‖x(t₀)‖` on every sample,
/// with `c` from the solution's envelope constant.
pub fn decay_certificate_with_rate(
    sol: &BassSolution,
    trajectory: &[(f64, Vector)],
    rate: f64,
) -> Result<bool> {
    let Some((t0, x0)) = trajectory.first() else {
        return Ok(true);
    };
    let c = sol.envelope_constant()?;
    let n0 = x0.norm();
    Ok(trajectory
        .iter()
        .all(|(t, x)| x.norm() <= c * (-rate * (t - t0)).exp() * n0 + 1e-6 * n0))
}

/// The envelope `‖x(t)‖ ≤ √(λmax(X*⁻¹)/λmin(X*⁻¹))e^{−βt}‖x(0)‖`.
pub fn decay_certificate(sol: &BassSolution, trajectory: &[(f64, Vector)]) -> Result<bool> {
    decay_certificate_with_rate(sol, trajectory, sol.beta)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdCertificate {
    pub theta: f64,
    pub kappa: f64,
    pub lambda2: f64,
    pub agents: usize,
    pub max_f: f64,
    pub gamma_min: f64,
    #[serde(with = "matlib::rows")]
    pub m1: Matrix,
    #[serde(with = "matlib::rows")]
    pub q1: Matrix,
    #[serde(with = "matlib::rows")]
    pub m2: Matrix,
    #[serde(with = "matlib::rows")]
    pub q2: Matrix,
}

impl ThresholdCertificate {
    /// The same bound with λ₂ replaced by Mohar's `4/N²`.
    pub fn gamma_min_mohar(&self) -> f64 {
        if self.agents < 2 {
            return 0.0;
        }
        coupling_threshold(
            self.theta,
            self.kappa,
            graph::mohar_bound(self.agents),
            self.agents,
            self.max_f,
        )
    }
}

/// `(1/λ₂)(θ + θ²κ + 4N² max‖Fᵢ‖² κ √(1+θ²κ²))`.
pub fn coupling_threshold(theta: f64, kappa: f64, lambda2: f64, agents: usize, max_f: f64) -> f64 {
    let n = agents as f64;
    (theta
        + theta * theta * kappa
        + 4.0 * n * n * max_f * max_f * kappa * (1.0 + theta * theta * kappa * kappa).sqrt())
        / lambda2
}

/// `θ = ‖A‖ + N max‖Lᵢ‖ + 2N max‖Fᵢ‖`.
pub fn theta(a: &Matrix, gains: &StaticGains) -> f64 {
    let n = gains.f.len().max(gains.l.len()) as f64;
    matlib::induced_2norm(a) + n * gains.max_l_norm() + 2.0 * n * gains.max_f_norm()
}

fn check_lyapunov_pair(closed: &Matrix, m: &Matrix, q: &Matrix, what: &str) -> Result<()> {
    for (mat, name) in [(m, "M"), (q, "Q")] {
        if !matlib::is_positive_definite(mat) {
            return Err(Error::InvalidCertificate(format!("{what}: {name} is not positive definite")));
        }
    }
    let r = m * closed + closed.transpose() * m + q * 2.0;
    let scale = 2.0 * matlib::induced_2norm(m) * matlib::induced_2norm(closed) + 2.0 * matlib::induced_2norm(q);
    let rel = r.amax() / scale.max(f64::MIN_POSITIVE);
    if rel > RESIDUAL_TOL {
        return Err(Error::InvalidCertificate(format!(
            "{what}: Lyapunov identity residual {rel:.3e}"
        )));
    }
    Ok(())
}

/// Verifies `M₁(A+BF) + (A+BF)ᵀM₁ = −2Q₁` and its observer counterpart, then
/// evaluates the coupling threshold on graph `g` (whose nodes are the agents).
///
/// With a single agent there is no coupling and the threshold is 0.
#[allow(clippy::too_many_arguments)]
pub fn threshold_certificate(
    p: &PlantModel,
    gains: &StaticGains,
    m1: &Matrix,
    q1: &Matrix,
    m2: &Matrix,
    q2: &Matrix,
    g: &Graph,
) -> Result<ThresholdCertificate> {
    let active: BTreeSet<NodeId> = gains.f.keys().copied().collect();
    if active != gains.l.keys().copied().collect::<BTreeSet<_>>() || active != g.node_ids().into_iter().collect() {
        return Err(Error::InvalidCertificate(
            "gain ids and graph nodes must coincide".into(),
        ));
    }
    let n = p.n();
    let (b, c) = p.aggregate(&active)?;
    let (f, l) = gains.aggregate(n)?;
    check_lyapunov_pair(&(&p.a + &b * &f), m1, q1, "state feedback")?;
    check_lyapunov_pair(&(&p.a + &l * &c), m2, q2, "observer")?;

    let lmax = matlib::lambda_max_sym(m1)?.max(matlib::lambda_max_sym(m2)?);
    let lmin = matlib::lambda_min_sym(q1)?.min(matlib::lambda_min_sym(q2)?);
    let kappa = lmax / lmin;
    let theta = theta(&p.a, gains);
    let agents = active.len();
    let max_f = gains.max_f_norm();
    let (lambda2, gamma_min) = if agents < 2 {
        (0.0, 0.0)
    } else {
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        let l2 = g.lambda2()?;
        (l2, coupling_threshold(theta, kappa, l2, agents, max_f))
    };
    Ok(ThresholdCertificate {
        theta,
        kappa,
        lambda2,
        agents,
        max_f,
        gamma_min,
        m1: m1.clone(),
        q1: q1.clone(),
        m2: m2.clone(),
        q2: q2.clone(),
    })
}

/// Threshold certificate with the Bass instantiation of the certificate matrices.
pub fn bass_threshold(p: &PlantModel, design: &BassDesign, g: &Graph) -> Result<ThresholdCertificate> {
    let (m1, q1, m2, q2) = design.certificate_matrices();
    threshold_certificate(p, &design.gains, &m1, &q1, &m2, &q2, g)
}
