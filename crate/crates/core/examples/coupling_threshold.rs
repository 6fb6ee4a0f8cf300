//! Certified coupling threshold for a static-gain network, compared with the
//! smallest stabilizing coupling found by bisection.

use std::collections::BTreeSet;

use nalgebra::dmatrix;
use plugplay::{analysis, bass, matlib, Channel, Graph, NodeId, PlantModel};

fn main() -> plugplay::Result<()> {
    let plant = PlantModel::with_channels(
        dmatrix![0.0, 1.0; 0.0, 0.0],
        [
            Channel::new(1, dmatrix![0.0; 1.0], dmatrix![1.0, 0.0]),
            Channel::new(2, dmatrix![0.0; 0.5], dmatrix![0.0, 2.0]),
            Channel::new(3, dmatrix![0.0; 2.0], dmatrix![1.0, 1.0]),
        ],
    )?
    .normalized();
    let active: BTreeSet<NodeId> = plant.ids().into_iter().collect();
    let g = Graph::path(&[1, 2, 3]);
    let design = bass::bass_design(&plant, &active, 0.25)?;
    let cert = bass::bass_threshold(&plant, &design, &g)?;
    println!(
        "theta = {:.3}  kappa = {:.3}  lambda2 = {:.3}  max|F_i| = {:.3}",
        cert.theta, cert.kappa, cert.lambda2, cert.max_f
    );
    println!("certified threshold   {:.4e}", cert.gamma_min);
    println!("with Mohar's bound    {:.4e}", cert.gamma_min_mohar());
    let critical = analysis::critical_gamma(&plant, &design.gains, &g, cert.gamma_min * 1.01, 1e-4)?;
    println!("bisection threshold   {:.4e}", critical.unwrap_or(f64::NAN));

    let cl = analysis::closed_loop_matrix(&plant, &design.gains, cert.gamma_min * 1.01, &g)?;
    println!("abscissa at 1.01x     {:.4}", matlib::spectral_abscissa(&cl.assembled)?);
    let report = analysis::verify_block_bounds(&cl, &plant, &design.gains);
    for c in &report.checks {
        println!("  {:<8} {:.3e} <= {:.3e}", c.name, c.lhs, c.rhs);
    }
    Ok(())
}
