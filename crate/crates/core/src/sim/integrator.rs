//! Fixed-step integration: classical RK4 and the exact flow of the observer
//! coupling used by the split scheme.

use std::collections::BTreeMap;

use crate::consensus::{FlowValue, PiState};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::matlib::{self, Matrix, Vector};

/// A state the integrator can combine linearly.
pub trait OdeState: Clone {
    /// `self += s · other`.
    fn axpy(&mut self, s: f64, other: &Self);
    fn is_finite(&self) -> bool;
}

impl OdeState for f64 {
    fn axpy(&mut self, s: f64, other: &Self) {
        *self += s * other;
    }

    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl OdeState for Vector {
    fn axpy(&mut self, s: f64, other: &Self) {
        Vector::axpy(self, s, other, 1.0);
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl<T: FlowValue> OdeState for PiState<T> {
    fn axpy(&mut self, s: f64, other: &Self) {
        PiState::axpy(self, s, other);
    }

    fn is_finite(&self) -> bool {
        self.integral.norm().is_finite() && self.estimate.norm().is_finite()
    }
}

impl<S: OdeState> OdeState for BTreeMap<NodeId, S> {
    fn axpy(&mut self, s: f64, other: &Self) {
        for (id, v) in self.iter_mut() {
            v.axpy(s, &other[id]);
        }
    }

    fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

fn checked<S: OdeState>(d: S, t: f64) -> Result<S> {
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::Integration {
            t,
            reason: "non-finite derivative".into(),
        })
    }
}

/// One classical Runge–Kutta step of size `h` from `(t, y)`.
pub fn rk4_step<S, F>(mut f: F, y: &S, t: f64, h: f64) -> Result<S>
where
    S: OdeState,
    F: FnMut(f64, &S) -> Result<S>,
{
    if !(h > 0.0) {
        return Err(Error::Precondition(format!("step size must be positive, got {h}")));
    }
    let stage = |base: &S, s: f64, k: &S| {
        let mut out = base.clone();
        out.axpy(s, k);
        out
    };
    let k1 = checked(f(t, y)?, t)?;
    let k2 = checked(f(t + h / 2.0, &stage(y, h / 2.0, &k1))?, t)?;
    let k3 = checked(f(t + h / 2.0, &stage(y, h / 2.0, &k2))?, t)?;
    let k4 = checked(f(t + h, &stage(y, h, &k3))?, t)?;
    let mut out = y.clone();
    out.axpy(h / 6.0, &k1);
    out.axpy(h / 3.0, &k2);
    out.axpy(h / 3.0, &k3);
    out.axpy(h / 6.0, &k4);
    if !out.is_finite() {
        return Err(Error::Integration {
            t: t + h,
            reason: "state became non-finite".into(),
        });
    }
    Ok(out)
}

/// `exp(−τ Γ L)` for a weighted Laplacian `L` and positive gains `Γ = diag(γ)`,
/// the exact flow of `ẋᵢ = γᵢ Σⱼ αᵢⱼ(xⱼ − xᵢ)`. Computed through the symmetric
/// matrix `Γ^{1/2} L Γ^{1/2}`.
pub fn coupling_propagator(laplacian: &Matrix, gammas: &[f64], tau: f64) -> Result<Matrix> {
    let n = laplacian.nrows();
    if gammas.len() != n {
        return Err(Error::dim("one coupling gain per node"));
    }
    if gammas.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::Precondition("coupling gains must be positive and finite".into()));
    }
    let sq: Vec<f64> = gammas.iter().map(|g| g.sqrt()).collect();
    let s = Matrix::from_fn(n, n, |i, j| sq[i] * laplacian[(i, j)] * sq[j]);
    // Γ^{-1/2}1 spans an exact null direction of S; split it off with a
    // Householder reflection so its eigenvalue is exactly zero.
    let v0 = Vector::from_iterator(n, sq.iter().map(|g| 1.0 / g)).normalize();
    let mut u = v0.clone();
    u[0] -= 1.0;
    let h = if u.norm() > 1e-14 {
        let u = u.normalize();
        matlib::identity(n) - &u * u.transpose() * 2.0
    } else {
        matlib::identity(n)
    };
    let basis = h.columns(1, n - 1).into_owned();
    let reduced = matlib::symmetrize(&(basis.transpose() * &s * &basis));
    let (vals, vecs) = matlib::symmetric_eigen(&reduced)?;
    let decay = Matrix::from_diagonal(&Vector::from_iterator(
        n - 1,
        vals.iter().map(|v| (-tau * v.max(0.0)).exp()),
    ));
    let q = &basis * vecs;
    let core = &v0 * v0.transpose() + &q * decay * q.transpose();
    Ok(Matrix::from_fn(n, n, |i, j| sq[i] * core[(i, j)] / sq[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use nalgebra::dmatrix;

    #[test]
    fn constant_state() {
        let y = rk4_step(|_, y: &Vector| Ok(y * 0.0), &Vector::from_vec(vec![1.0, 2.0]), 0.0, 0.1).unwrap();
        assert_eq!(y, Vector::from_vec(vec![1.0, 2.0]));
    }

    #[test]
    fn scalar_decay_one_step() {
        let y = rk4_step(|_, y: &f64| Ok(-y), &1.0, 0.0, 0.1).unwrap();
        // 1 − h + h²/2 − h³/6 + h⁴/24
        assert!((y - 0.9048375).abs() < 1e-15);
    }

    #[test]
    fn linear_system_matches_expm() {
        let a = dmatrix![0.0, 1.0; -2.0, -0.3];
        let mut y = Vector::from_vec(vec![1.0, -0.5]);
        for k in 0..1000 {
            y = rk4_step(|_, v: &Vector| Ok(&a * v), &y, k as f64 * 1e-3, 1e-3).unwrap();
        }
        let exact = matlib::expm(&a, 1.0) * Vector::from_vec(vec![1.0, -0.5]);
        assert!((y - exact).amax() < 1e-10);
    }

    #[test]
    fn non_finite_is_an_error() {
        let e = rk4_step(|_, _: &f64| Ok(f64::NAN), &1.0, 2.0, 0.1).unwrap_err();
        assert!(matches!(e, Error::Integration { t, .. } if t == 2.0));
        assert!(rk4_step(|_, y: &f64| Ok(*y), &1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn propagator_matches_expm() {
        let g = Graph::path(&[1, 2, 3, 4]);
        let l = g.laplacian();
        let gam = [1.0, 3.0, 0.5, 7.0];
        let p = coupling_propagator(&l, &gam, 0.2).unwrap();
        let gl = Matrix::from_diagonal(&Vector::from_row_slice(&gam)) * &l;
        let e = matlib::expm(&(-gl), 0.2);
        assert!((&p - &e).amax() < 1e-12, "{p} {e}");
    }

    #[test]
    fn propagator_stiff_limit_is_weighted_average() {
        let l = Graph::complete(&[1, 2, 3]).laplacian();
        let gam = [1e10, 2e10, 4e10];
        let p = coupling_propagator(&l, &gam, 1.0).unwrap();
        // consensus value is Σ(xᵢ/γᵢ)/Σ(1/γᵢ)
        let w: Vec<f64> = gam.iter().map(|g| 1.0 / g).collect();
        let tot: f64 = w.iter().sum();
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[(i, j)] - w[j] / tot).abs() < 1e-9);
            }
        }
    }
}
