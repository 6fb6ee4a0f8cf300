//! Five agents each holding one input column solve for X*/N by consensus.

use std::collections::BTreeMap;

use nalgebra::dmatrix;
use plugplay::consensus::{self, PiNetwork, PiState};
use plugplay::sim::rk4_step;
use plugplay::{bass, matlib, Graph, Matrix, NodeId};

fn main() -> plugplay::Result<()> {
    let a = dmatrix![0.0, 1.0, 0.0; 0.0, 0.0, 1.0; -1.0, 0.5, 0.2];
    let ids: Vec<NodeId> = (1..=5).collect();
    let inputs: BTreeMap<NodeId, Matrix> = ids
        .iter()
        .map(|&id| {
            let s = id as f64;
            (id, dmatrix![0.1 * s; (0.7 * s).sin(); (0.3 * s).cos()])
        })
        .collect();
    let g = Graph::ring(&ids);
    let beta = 1.5;

    let b = matlib::hcat(3, &inputs.values().collect::<Vec<_>>())?;
    let reference = bass::bass_solve(&a, &b, beta)?.x_star / ids.len() as f64;

    let params = consensus::bass_rate_params(&a, beta, &g, 0.5)?;
    println!("k = {:.3}, gamma = {:.3}", params.k, params.gamma);
    let mut state: PiNetwork<Matrix> = ids.iter().map(|&id| (id, PiState::<Matrix>::zeros(3))).collect();
    let h = 1e-3 / params.gamma.max(1.0);
    let mut t = 0.0;
    for report in 1..=6 {
        while t < report as f64 * 2.0 {
            state = rk4_step(
                |_, s: &PiNetwork<Matrix>| consensus::bass_flow_derivative(&a, &inputs, beta, params, &g, s),
                &state,
                t,
                h,
            )?;
            t += h;
        }
        let err = state
            .values()
            .map(|s| matlib::induced_2norm(&(&s.estimate - &reference)))
            .fold(0.0, f64::max);
        println!("t = {t:5.2}  max |X_i - X*/N| = {err:.3e}");
    }
    Ok(())
}
