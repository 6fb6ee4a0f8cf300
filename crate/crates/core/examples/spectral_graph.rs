//! Laplacian spectra of small graphs and Mohar's lower bound on λ₂.

use plugplay::graph::{self, Graph};
use plugplay::NodeId;

fn main() -> plugplay::Result<()> {
    let ids: Vec<NodeId> = (1..=6).collect();
    let graphs = [
        ("path", Graph::path(&ids)),
        ("ring", Graph::ring(&ids)),
        ("star", Graph::star(1, &ids[1..])),
        ("complete", Graph::complete(&ids)),
    ];
    println!("Mohar bound 4/N^2 for N = 6: {:.4}", graph::mohar_bound(6));
    for (name, g) in graphs {
        let spec = g.laplacian_spectrum()?;
        let s: Vec<String> = spec.iter().map(|v| format!("{v:.3}")).collect();
        println!("{name:<9} lambda2 = {:.4}  spectrum [{}]", g.lambda2()?, s.join(", "));
    }
    Ok(())
}
