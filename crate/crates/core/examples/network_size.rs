//! Agents estimate how many of them there are, with one informer node.

use plugplay::consensus::{self, FlowParams, PiNetwork, PiState, INFORMER};
use plugplay::sim::rk4_step;
use plugplay::{Graph, NodeId};

fn main() -> plugplay::Result<()> {
    for n in [1usize, 3, 6] {
        let agents: Vec<NodeId> = (1..=n as NodeId).collect();
        let mut ids = vec![INFORMER];
        ids.extend(&agents);
        let g = Graph::path(&ids);
        let params = FlowParams::default();
        let mut state: PiNetwork<f64> = ids.iter().map(|&id| (id, PiState::new(0.0, 0.0))).collect();
        let h = 1e-2;
        let mut t = 0.0;
        while t < 200.0 {
            state = rk4_step(|_, s: &PiNetwork<f64>| consensus::size_flow_derivative(params, &g, s), &state, t, h)?;
            t += h;
        }
        let est: Vec<String> = state.iter().map(|(id, s)| format!("{id}:{:.4}", s.estimate)).collect();
        println!("N = {n}  zeta at t = 200  {}", est.join(" "));
    }
    Ok(())
}
