//! Dense real linear algebra used throughout the crate.
//!
//! Everything is built on `nalgebra`'s dynamically sized matrices. Matrices are
//! small (state dimension at most a dozen), so the Lyapunov solver works on the
//! vectorized Kronecker form directly rather than a Schur-based method.

use nalgebra::{DMatrix, DVector, FullPivLU, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative threshold below which a matrix is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

const EIG_EPS: f64 = 1e-15;
const EIG_MAX_ITER: usize = 10_000;

/// Eigenvalues of a real square matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Largest real part. `-inf` for the empty spectrum.
    pub fn abscissa(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest real part. `+inf` for the empty spectrum.
    pub fn min_real_part(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::INFINITY, f64::min)
    }

    /// Eigenvalues sorted by (real, imaginary) part.
    pub fn sorted(&self) -> Vec<Complex64> {
        let mut v = self.eigenvalues.clone();
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    /// Greedy nearest-neighbour pairing of two spectra; true when every
    /// eigenvalue of `self` finds a distinct partner in `other` within `tol`.
    pub fn matches(&self, other: &Spectrum, tol: f64) -> bool {
        if self.len() != other.len() {
            return false;
        }
        let mut remaining = other.sorted();
        for z in self.sorted() {
            let best = remaining
                .iter()
                .enumerate()
                .map(|(i, w)| (i, (z - w).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((i, d)) if d <= tol => {
                    remaining.swap_remove(i);
                }
                _ => return false,
            }
        }
        true
    }
}

pub fn identity(n: usize) -> Matrix {
    Matrix::identity(n, n)
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Kronecker sum `A ⊗ I_n + I_m ⊗ B` for square `A` (m×m) and `B` (n×n).
pub fn kron_sum(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure_square(a, "kron_sum lhs")?;
    ensure_square(b, "kron_sum rhs")?;
    let (m, n) = (a.nrows(), b.nrows());
    Ok(kron(a, &identity(n)) + kron(&identity(m), b))
}

/// Stacks the columns of `m` into one column vector.
pub fn vec(m: &Matrix) -> Vector {
    // nalgebra storage is column-major
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::dim(format!(
            "unvec: length {} != {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Matrix::from_column_slice(rows, cols, v.as_slice()))
}

pub(crate) fn ensure_square(a: &Matrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Solves `A X + X Aᵀ = -Q`.
///
/// The system is solved in vectorized form `(A ⊕ A) vec(X) = -vec(Q)` with a
/// fully pivoted LU. When `Q` is symmetric the returned `X` is symmetrized.
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    ensure_square(a, "Lyapunov A")?;
    ensure_square(q, "Lyapunov Q")?;
    let n = a.nrows();
    if q.nrows() != n {
        return Err(Error::dim(format!(
            "Lyapunov Q is {}x{}, expected {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let k = kron_sum(a, a)?;
    let lu = FullPivLU::new(k);
    let u = lu.u();
    let diag = u.diagonal();
    let max_piv = diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min_piv = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let ratio = if max_piv > 0.0 { min_piv / max_piv } else { 0.0 };
    if ratio <= 1e-13 {
        return Err(Error::NoUniqueSolution { pivot_ratio: ratio });
    }
    let rhs = -vec(q);
    let sol = lu.solve(&rhs).ok_or(Error::NoUniqueSolution { pivot_ratio: ratio })?;
    let x = unvec(&sol, n, n)?;
    let x = if (q - q.transpose()).amax() <= 1e-14 * q.amax().max(1.0) {
        symmetrize(&x)
    } else {
        x
    };
    if !is_finite(&x) {
        return Err(Error::NumericFailure("non-finite Lyapunov solution".into()));
    }
    Ok(x)
}

/// Relative residual `‖AX + XAᵀ + Q‖ / (2‖A‖‖X‖ + ‖Q‖)` in the Frobenius norm.
pub fn lyapunov_residual(a: &Matrix, x: &Matrix, q: &Matrix) -> f64 {
    let r = a * x + x * a.transpose() + q;
    let scale = 2.0 * a.norm() * x.norm() + q.norm();
    if scale == 0.0 {
        r.norm()
    } else {
        r.norm() / scale
    }
}

/// All eigenvalues via real Schur decomposition (Hessenberg + shifted QR).
pub fn eigenvalues(a: &Matrix) -> Result<Spectrum> {
    ensure_square(a, "eigenvalues")?;
    if a.nrows() == 0 {
        return Ok(Spectrum {
            eigenvalues: Vec::new(),
        });
    }
    if !is_finite(a) {
        return Err(Error::NumericFailure(
            "eigenvalues of a matrix with non-finite entries".into(),
        ));
    }
    // balanced LAPACK-style iteration first, nalgebra's Schur as fallback
    let h = nalgebra::linalg::Hessenberg::new(balance(a)).h();
    let eigenvalues = hessenberg_qr(h)
        .or_else(|| {
            Schur::try_new(a.clone(), EIG_EPS, EIG_MAX_ITER).map(|s| s.complex_eigenvalues().iter().copied().collect())
        })
        .ok_or_else(|| {
            Error::NumericFailure(format!(
                "QR iteration did not converge (n = {}, |A| = {:.3e})",
                a.nrows(),
                a.norm()
            ))
        })?;
    Ok(Spectrum { eigenvalues })
}

/// Eigenvalues of an upper Hessenberg matrix by the implicit double-shift QR
/// iteration of LAPACK's `dlahqr` (eigenvalues only).
fn hessenberg_qr(mut h: Matrix) -> Option<Vec<Complex64>> {
    let n = h.nrows();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    if n == 0 {
        return Some(out);
    }
    for j in 0..n.saturating_sub(3) {
        h[(j + 2, j)] = 0.0;
        h[(j + 3, j)] = 0.0;
    }
    if n >= 3 {
        h[(n - 1, n - 3)] = 0.0;
    }
    let ulp = f64::EPSILON;
    let smlnum = f64::MIN_POSITIVE * (n as f64 / ulp);
    let itmax = 30 * n.max(10);
    const KEXSH: usize = 10;
    let mut kdefl = 0;
    // active block is rows/cols l..=i (0-based)
    let mut i = n as isize - 1;
    while i >= 0 {
        let iu = i as usize;
        let mut l = 0usize;
        let mut converged = false;
        for _ in 0..=itmax {
            let mut k = iu;
            while k > l {
                let sub = h[(k, k - 1)].abs();
                if sub <= smlnum {
                    break;
                }
                let mut tst = h[(k - 1, k - 1)].abs() + h[(k, k)].abs();
                if tst == 0.0 {
                    if k >= 2 {
                        tst += h[(k - 1, k - 2)].abs();
                    }
                    if k + 1 < n {
                        tst += h[(k + 1, k)].abs();
                    }
                }
                if sub <= ulp * tst {
                    let ab = sub.max(h[(k - 1, k)].abs());
                    let ba = sub.min(h[(k - 1, k)].abs());
                    let diff = (h[(k - 1, k - 1)] - h[(k, k)]).abs();
                    let aa = h[(k, k)].abs().max(diff);
                    let bb = h[(k, k)].abs().min(diff);
                    let s = aa + ab;
                    if ba * (ab / s) <= smlnum.max(ulp * (bb * (aa / s))) {
                        break;
                    }
                }
                k -= 1;
            }
            l = k;
            if l > 0 {
                h[(l, l - 1)] = 0.0;
            }
            if l + 1 >= iu {
                converged = true;
                break;
            }
            kdefl += 1;

            let (h11, h12, h21, h22);
            if kdefl % (2 * KEXSH) == 0 {
                let s = h[(iu, iu - 1)].abs() + h[(iu - 1, iu - 2)].abs();
                h11 = 0.75 * s + h[(iu, iu)];
                h12 = -0.4375 * s;
                h21 = s;
                h22 = h11;
            } else if kdefl % KEXSH == 0 {
                let s = h[(l + 1, l)].abs() + h[(l + 2, l + 1)].abs();
                h11 = 0.75 * s + h[(l, l)];
                h12 = -0.4375 * s;
                h21 = s;
                h22 = h11;
            } else {
                h11 = h[(iu - 1, iu - 1)];
                h21 = h[(iu, iu - 1)];
                h12 = h[(iu - 1, iu)];
                h22 = h[(iu, iu)];
            }
            let s = h11.abs() + h12.abs() + h21.abs() + h22.abs();
            let (rt1r, rt1i, rt2r, rt2i);
            if s == 0.0 {
                (rt1r, rt1i, rt2r, rt2i) = (0.0, 0.0, 0.0, 0.0);
            } else {
                let (h11, h12, h21, h22) = (h11 / s, h12 / s, h21 / s, h22 / s);
                let tr = (h11 + h22) / 2.0;
                let det = (h11 - tr) * (h22 - tr) - h12 * h21;
                let rtdisc = det.abs().sqrt();
                if det >= 0.0 {
                    rt1r = tr * s;
                    rt2r = rt1r;
                    rt1i = rtdisc * s;
                    rt2i = -rt1i;
                } else {
                    let (a1, a2) = (tr + rtdisc, tr - rtdisc);
                    let r = if (a1 - h22).abs() <= (a2 - h22).abs() { a1 } else { a2 } * s;
                    rt1r = r;
                    rt2r = r;
                    rt1i = 0.0;
                    rt2i = 0.0;
                }
            }

            // look for two consecutive small subdiagonals
            let mut m = iu - 2;
            let mut v = [0.0f64; 3];
            loop {
                let s = (h[(m, m)] - rt2r).abs() + rt2i.abs() + h[(m + 1, m)].abs();
                let h21s = h[(m + 1, m)] / s;
                v[0] = h21s * h[(m, m + 1)] + (h[(m, m)] - rt1r) * ((h[(m, m)] - rt2r) / s) - rt1i * (rt2i / s);
                v[1] = h21s * (h[(m, m)] + h[(m + 1, m + 1)] - rt1r - rt2r);
                v[2] = h21s * h[(m + 2, m + 1)];
                let s = v[0].abs() + v[1].abs() + v[2].abs();
                v.iter_mut().for_each(|x| *x /= s);
                if m == l {
                    break;
                }
                let h00 = h[(m, m - 1)].abs() * (v[1].abs() + v[2].abs());
                let h01 = v[0].abs() * (h[(m - 1, m - 1)].abs() + h[(m, m)].abs() + h[(m + 1, m + 1)].abs());
                if h00 <= ulp * h01 {
                    break;
                }
                m -= 1;
            }

            for k in m..iu {
                let nr = 3.min(iu - k + 1);
                if k > m {
                    for r in 0..nr {
                        v[r] = h[(k + r, k - 1)];
                    }
                }
                let t1 = householder(&mut v[..nr]);
                if k > m {
                    h[(k, k - 1)] = v[0];
                    h[(k + 1, k - 1)] = 0.0;
                    if k + 1 < iu {
                        h[(k + 2, k - 1)] = 0.0;
                    }
                } else if m > l {
                    h[(k, k - 1)] *= 1.0 - t1;
                }
                let v2 = v[1];
                let t2 = t1 * v2;
                if nr == 3 {
                    let v3 = v[2];
                    let t3 = t1 * v3;
                    for j in k..=iu {
                        let sum = h[(k, j)] + v2 * h[(k + 1, j)] + v3 * h[(k + 2, j)];
                        h[(k, j)] -= sum * t1;
                        h[(k + 1, j)] -= sum * t2;
                        h[(k + 2, j)] -= sum * t3;
                    }
                    for j in l..=(k + 3).min(iu) {
                        let sum = h[(j, k)] + v2 * h[(j, k + 1)] + v3 * h[(j, k + 2)];
                        h[(j, k)] -= sum * t1;
                        h[(j, k + 1)] -= sum * t2;
                        h[(j, k + 2)] -= sum * t3;
                    }
                } else {
                    for j in k..=iu {
                        let sum = h[(k, j)] + v2 * h[(k + 1, j)];
                        h[(k, j)] -= sum * t1;
                        h[(k + 1, j)] -= sum * t2;
                    }
                    for j in l..=iu {
                        let sum = h[(j, k)] + v2 * h[(j, k + 1)];
                        h[(j, k)] -= sum * t1;
                        h[(j, k + 1)] -= sum * t2;
                    }
                }
            }
        }
        if !converged {
            return None;
        }
        if l == iu {
            out[iu] = Complex64::new(h[(iu, iu)], 0.0);
        } else {
            let (e1, e2) = eig2x2(h[(l, l)], h[(l, iu)], h[(iu, l)], h[(iu, iu)]);
            out[l] = e1;
            out[iu] = e2;
        }
        kdefl = 0;
        i = l as isize - 1;
    }
    Some(out)
}

/// Elementary reflector `I − τvvᵀ` with `v[0] = 1` mapping `x` to `(β, 0, …)`.
/// On return `x[0] = β` and `x[1..]` holds `v[1..]`.
fn householder(x: &mut [f64]) -> f64 {
    if x.len() <= 1 {
        return 0.0;
    }
    let alpha = x[0];
    let xnorm = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    if xnorm == 0.0 {
        return 0.0;
    }
    let beta = -alpha.hypot(xnorm).copysign(alpha);
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    x[1..].iter_mut().for_each(|v| *v *= scale);
    x[0] = beta;
    tau
}

fn eig2x2(a: f64, b: f64, c: f64, d: f64) -> (Complex64, Complex64) {
    let p = 0.5 * (a - d);
    let disc = p * p + b * c;
    let mid = 0.5 * (a + d);
    if disc >= 0.0 {
        let z = p + disc.sqrt().copysign(p);
        if z == 0.0 {
            return (Complex64::new(mid, 0.0), Complex64::new(mid, 0.0));
        }
        (Complex64::new(d + z, 0.0), Complex64::new(d - b * c / z, 0.0))
    } else {
        let w = (-disc).sqrt();
        (Complex64::new(mid, w), Complex64::new(mid, -w))
    }
}

/// Diagonal similarity `D⁻¹AD` with power-of-two entries that roughly equalizes
/// row and column norms.
pub fn balance(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let mut b = a.clone();
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let c: f64 = (0..n).filter(|&j| j != i).map(|j| b[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut f = 1.0;
            let (mut cc, mut rr) = (c, r);
            while cc < rr / 2.0 {
                cc *= 2.0;
                rr /= 2.0;
                f *= 2.0;
            }
            while cc >= rr * 2.0 {
                cc /= 2.0;
                rr *= 2.0;
                f /= 2.0;
            }
            if (cc + rr) < 0.95 * (c + r) {
                converged = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    b
}

pub fn spectral_abscissa(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?.abscissa())
}

/// `r(A)`: the smallest real part among the eigenvalues.
pub fn min_real_part(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?.min_real_part())
}

/// True iff the spectral abscissa is below `-tol`. Numeric failures count as
/// not Hurwitz.
pub fn is_hurwitz(a: &Matrix, tol: f64) -> bool {
    spectral_abscissa(a).map(|s| s < -tol).unwrap_or(false)
}

fn svd(a: &Matrix, uv: bool) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(a.clone(), uv, uv, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericFailure("SVD did not converge".into()))
}

/// Singular values in descending order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    match svd(a, false) {
        Ok(s) => {
            let mut v: Vec<f64> = s.singular_values.iter().copied().collect();
            v.sort_by(|x, y| y.total_cmp(x));
            v
        }
        Err(_) => vec![f64::NAN; a.nrows().min(a.ncols())],
    }
}

pub fn sigma_max(a: &Matrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

pub fn sigma_min(a: &Matrix) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// Induced 2-norm (largest singular value).
pub fn induced_2norm(a: &Matrix) -> f64 {
    sigma_max(a)
}

/// Numerical rank with threshold `rtol · σ_max`.
pub fn rank(a: &Matrix, rtol: f64) -> usize {
    let sv = singular_values(a);
    let Some(&top) = sv.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * top).count()
}

/// Inverse of a square matrix; fails when `σ_min ≤ 1e-12 · σ_max`.
pub fn inverse(a: &Matrix) -> Result<Matrix> {
    ensure_square(a, "inverse")?;
    let sv = singular_values(a);
    let (smax, smin) = (
        sv.first().copied().unwrap_or(0.0),
        sv.last().copied().unwrap_or(0.0),
    );
    if !(smin > SINGULAR_RTOL * smax) {
        return Err(Error::Singular {
            sigma_min: smin,
            sigma_max: smax,
        });
    }
    a.clone().try_inverse().ok_or(Error::Singular {
        sigma_min: smin,
        sigma_max: smax,
    })
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues ascending and the
/// matching orthonormal eigenvectors as columns.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    ensure_square(a, "symmetric_eigen")?;
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(symmetrize(a), EIG_EPS, EIG_MAX_ITER)
        .ok_or_else(|| Error::NumericFailure("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Largest eigenvalue of the symmetric part.
pub fn lambda_max_sym(a: &Matrix) -> Result<f64> {
    Ok(symmetric_eigen(a)?.0.last().copied().unwrap_or(f64::NEG_INFINITY))
}

/// Smallest eigenvalue of the symmetric part.
pub fn lambda_min_sym(a: &Matrix) -> Result<f64> {
    Ok(symmetric_eigen(a)?.0.first().copied().unwrap_or(f64::INFINITY))
}

pub fn is_positive_definite(a: &Matrix) -> bool {
    lambda_min_sym(a).map(|l| l > 0.0).unwrap_or(false)
}

/// Horizontal concatenation `[M₁ M₂ ⋯]`; every block must have `rows` rows.
pub fn hcat(rows: usize, blocks: &[&Matrix]) -> Result<Matrix> {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        if b.nrows() != rows {
            return Err(Error::dim(format!(
                "hcat: block has {} rows, expected {rows}",
                b.nrows()
            )));
        }
        out.view_mut((0, c0), (rows, b.ncols())).copy_from(b);
        c0 += b.ncols();
    }
    Ok(out)
}

/// Vertical concatenation; every block must have `cols` columns.
pub fn vcat(cols: usize, blocks: &[&Matrix]) -> Result<Matrix> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        if b.ncols() != cols {
            return Err(Error::dim(format!(
                "vcat: block has {} columns, expected {cols}",
                b.ncols()
            )));
        }
        out.view_mut((r0, 0), (b.nrows(), cols)).copy_from(b);
        r0 += b.nrows();
    }
    Ok(out)
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// `exp(t·A)` for small dense matrices via scaling and squaring.
pub fn expm(a: &Matrix, t: f64) -> Matrix {
    (a * t).exp()
}

/// Serde adapter storing a matrix as a list of rows.
pub mod rows {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix, String> {
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

/// Like [`rows`], for optional fields.
pub mod opt_rows {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => super::rows::serialize(m, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|r| super::rows::from_rows(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).amax()
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
        assert_eq!(
            kron(&dmatrix![2.0], &identity(2)),
            dmatrix![2.0, 0.0; 0.0, 2.0]
        );
        let k = kron(&dmatrix![0.0, 1.0; 0.0, 0.0], &dmatrix![1.0; 1.0]);
        assert_eq!(k, dmatrix![0.0, 1.0; 0.0, 1.0; 0.0, 0.0; 0.0, 0.0]);
    }

    #[test]
    fn kron_sum_examples() {
        assert_eq!(
            kron_sum(&dmatrix![1.5], &dmatrix![-0.25]).unwrap(),
            dmatrix![1.25]
        );
        assert_eq!(
            kron_sum(&Matrix::zeros(2, 2), &Matrix::zeros(2, 2)).unwrap(),
            Matrix::zeros(4, 4)
        );
        assert!(matches!(
            kron_sum(&Matrix::zeros(2, 3), &identity(2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn vec_is_column_major() {
        let m = dmatrix![1.0, 3.0; 2.0, 4.0];
        assert_eq!(vec(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unvec(&vec(&m), 2, 2).unwrap(), m);
        assert!(vec(&Matrix::zeros(3, 2)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lyapunov_scalar_and_identity() {
        let x = solve_lyapunov(&dmatrix![-1.0], &dmatrix![2.0]).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
        let x = solve_lyapunov(&(-identity(2)), &(identity(2) * 2.0)).unwrap();
        assert!(max_abs_diff(&x, &identity(2)) < 1e-14);
    }

    #[test]
    fn lyapunov_double_integrator_bass_form() {
        // -(A + I) for the double integrator with Q = 2 B Bᵀ, B = e₂
        let a = -dmatrix![1.0, 1.0; 0.0, 1.0];
        let q = dmatrix![0.0, 0.0; 0.0, 2.0];
        let x = solve_lyapunov(&a, &q).unwrap();
        let expected = dmatrix![0.5, -0.5; -0.5, 1.0];
        assert!(max_abs_diff(&x, &expected) < 1e-13);
    }

    #[test]
    fn lyapunov_singular_sum_is_rejected() {
        // eigenvalues 1 and -1 sum to zero
        let a = dmatrix![1.0, 0.0; 0.0, -1.0];
        assert!(matches!(
            solve_lyapunov(&a, &identity(2)),
            Err(Error::NoUniqueSolution { .. })
        ));
    }

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn hessenberg_qr_on_a_cycling_matrix() {
        let a = Matrix::from_fn(7, 7, |i, j| ((i * 7 + j) as f64 * 1.3).sin() + if i == j { 0.5 } else { 0.0 });
        let ev = hessenberg_qr(nalgebra::linalg::Hessenberg::new(a.clone()).h()).unwrap();
        let sum: Complex64 = ev.iter().sum();
        let prod: Complex64 = ev.iter().product();
        assert!((sum.re - a.trace()).abs() < 1e-12 && sum.im.abs() < 1e-12);
        assert!((prod.re - a.determinant()).abs() < 1e-10 && prod.im.abs() < 1e-10);
        for z in &ev {
            let shifted = a.map(Complex64::from) - nalgebra::DMatrix::<Complex64>::identity(7, 7) * *z;
            let smin = shifted.singular_values().min();
            assert!(smin < 1e-12 * a.norm(), "{z}: {smin}");
        }
    }

    #[test]
    fn graded_spectrum_resolves_small_eigenvalues() {
        // similarity of diag(−1e10, −1e5, −1, −1e−3, −2) by a dense, well
        // conditioned matrix
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![-1e10, -1e5, -1.0, -1e-3, -2.0]));
        let t = identity(5) + Matrix::from_fn(5, 5, |i, j| 0.2 * ((i + 2 * j) as f64).cos());
        let a = &t * d * t.clone().try_inverse().unwrap();
        let ev = sorted(eigenvalues(&a).unwrap().eigenvalues);
        let want = [-1e10, -1e5, -2.0, -1.0, -1e-3];
        for (z, w) in ev.iter().zip(want) {
            assert!((z.re - w).abs() <= 1e-6 * w.abs().max(1.0), "{z} vs {w}");
        }
    }

    #[test]
    fn balance_is_a_similarity_that_equalizes_norms() {
        let a = dmatrix![1.0, 1e6, 0.0; 1e-6, 2.0, 1e4; 0.0, 1e-4, 3.0];
        let b = balance(&a);
        assert_relative_eq!(b.trace(), a.trace(), epsilon = 1e-12);
        let spread = |m: &Matrix| m.iter().filter(|v| **v != 0.0).map(|v| v.abs().log10()).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(spread(&b) < spread(&a));
        let ea = sorted(eigenvalues(&a).unwrap().eigenvalues);
        let eb = sorted(eigenvalues(&b).unwrap().eigenvalues);
        for (x, y) in ea.iter().zip(&eb) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn eigenvalue_examples() {
        let s = eigenvalues(&Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0, 3.0])))
            .unwrap()
            .sorted();
        for (z, e) in s.iter().zip([1.0, 2.0, 3.0]) {
            assert!((z - Complex64::new(e, 0.0)).norm() < 1e-12);
        }
        let s = eigenvalues(&dmatrix![0.0, 1.0; -2.0, -2.0]).unwrap().sorted();
        assert!((s[0] - Complex64::new(-1.0, -1.0)).norm() < 1e-12);
        assert!((s[1] - Complex64::new(-1.0, 1.0)).norm() < 1e-12);
        let s = eigenvalues(&dmatrix![0.0, 1.0; 0.0, 0.0]).unwrap();
        assert!(s.eigenvalues.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn abscissa_and_hurwitz() {
        let d = dmatrix![-1.0, 0.0; 0.0, -3.0];
        assert_relative_eq!(spectral_abscissa(&d).unwrap(), -1.0);
        assert_relative_eq!(min_real_part(&d).unwrap(), -3.0);
        let nil = dmatrix![0.0, 1.0; 0.0, 0.0];
        assert_eq!(spectral_abscissa(&nil).unwrap(), 0.0);
        assert_eq!(min_real_part(&nil).unwrap(), 0.0);
        let osc = dmatrix![0.0, 1.0; -2.0, -2.0];
        assert_relative_eq!(spectral_abscissa(&osc).unwrap(), -1.0, epsilon = 1e-12);
        assert_relative_eq!(min_real_part(&osc).unwrap(), -1.0, epsilon = 1e-12);
        assert!(is_hurwitz(&(-identity(3)), 1e-9));
        assert!(!is_hurwitz(&nil, 1e-9));
        assert!(is_hurwitz(&osc, 1e-9));
    }

    #[test]
    fn norms_and_inverse() {
        assert_relative_eq!(induced_2norm(&identity(3)), 1.0, epsilon = 1e-14);
        assert_eq!(singular_values(&identity(3)), vec![1.0, 1.0, 1.0]);
        assert!(max_abs_diff(&inverse(&identity(3)).unwrap(), &identity(3)) < 1e-15);
        let d = dmatrix![3.0, 0.0; 0.0, -4.0];
        assert_relative_eq!(induced_2norm(&d), 4.0, epsilon = 1e-14);
        let sv = singular_values(&d);
        assert_relative_eq!(sv[0], 4.0, epsilon = 1e-14);
        assert_relative_eq!(sv[1], 3.0, epsilon = 1e-14);
        let inv = inverse(&dmatrix![0.5, -0.5; -0.5, 1.0]).unwrap();
        assert!(max_abs_diff(&inv, &dmatrix![4.0, 2.0; 2.0, 2.0]) < 1e-13);
        assert!(matches!(
            inverse(&dmatrix![1.0, 2.0; 2.0, 4.0]),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn spectrum_matching() {
        let a = Spectrum {
            eigenvalues: vec![Complex64::new(-1.0, 1.0), Complex64::new(-1.0, -1.0)],
        };
        let b = Spectrum {
            eigenvalues: vec![Complex64::new(-1.0, -1.0 + 1e-9), Complex64::new(-1.0, 1.0)],
        };
        assert!(a.matches(&b, 1e-7));
        let c = Spectrum {
            eigenvalues: vec![Complex64::new(-1.0, 1.0), Complex64::new(-1.0, 1.0)],
        };
        assert!(!a.matches(&c, 1e-7));
    }
}
