//! Centralized Bass gain for a double integrator and its decay envelope.

use nalgebra::{dmatrix, dvector};
use plugplay::bass;
use plugplay::matlib;
use plugplay::sim::rk4_step;

fn main() -> plugplay::Result<()> {
    let a = dmatrix![0.0, 1.0; 0.0, 0.0];
    let b = dmatrix![0.0; 1.0];
    let beta = 0.5;
    let sol = bass::bass_solve(&a, &b, beta)?;
    println!("X* = {:.4}", sol.x_star);
    println!("F  = {:.4}", sol.f);
    let acl = &a + &b * &sol.f;
    println!("abscissa(A + BF) = {:.6} (target -{beta})", matlib::spectral_abscissa(&acl)?);

    let c = sol.envelope_constant()?;
    let h = 1e-2;
    let mut x = dvector![1.0, 0.0];
    let x0 = x.norm();
    let mut traj = vec![(0.0, x.clone())];
    for k in 0..1000 {
        x = rk4_step(|_, v: &nalgebra::DVector<f64>| Ok(&acl * v), &x, k as f64 * h, h)?;
        traj.push(((k + 1) as f64 * h, x.clone()));
    }
    for (t, x) in traj.iter().step_by(200) {
        println!("t = {t:5.2}  |x| = {:.3e}  envelope = {:.3e}", x.norm(), c * (-beta * t).exp() * x0);
    }
    println!("envelope holds: {}", bass::decay_certificate(&sol, &traj)?);
    Ok(())
}
