//! Seeded random problem instances for property tests and the `verify` suites.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::bass;
use crate::graph::{Graph, NodeId};
use crate::matlib::{self, Matrix};
use crate::plant::{self, Channel, PlantModel};

/// Instances whose shifted Gramian is worse conditioned than this are redrawn.
pub const MAX_GRAMIAN_COND: f64 = 1e8;

/// A random state matrix with entries in `[-1, 1]`, shifted left when needed so
/// that `β > −r(A)` holds with margin `β/2`.
pub fn random_a(rng: &mut impl Rng, n: usize, beta: f64) -> Matrix {
    let mut a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let r = matlib::min_real_part(&a).unwrap_or(0.0);
    if r < -beta / 2.0 {
        a += matlib::identity(n) * (-beta / 2.0 - r);
    }
    a
}

fn split_inputs(rng: &mut impl Rng, total: usize, parts: usize) -> Vec<usize> {
    // every part gets at least one column
    let mut sizes = vec![1; parts];
    for _ in parts..total {
        let k = rng.gen_range(0..parts);
        sizes[k] += 1;
    }
    sizes
}

fn well_conditioned(a: &Matrix, b: &Matrix, beta: f64) -> bool {
    let n = a.nrows();
    let Ok(k) = plant::controllability_matrix(a, b) else {
        return false;
    };
    if matlib::rank(&k, 1e-6) != n {
        return false;
    }
    match bass::bass_solve(a, b, beta) {
        Ok(s) => {
            let sv = matlib::singular_values(&s.x_star);
            sv[0] / sv[n - 1] < MAX_GRAMIAN_COND
        }
        Err(_) => false,
    }
}

/// A controllable pair `(A, [B₁ … B_k])` with `n ≤ max_n` states and at most
/// `max_inputs` input columns in total, plus a valid shift `β`.
pub fn controllable_pair(
    rng: &mut impl Rng,
    max_n: usize,
    max_inputs: usize,
    beta_range: (f64, f64),
) -> (Matrix, Vec<Matrix>, f64) {
    loop {
        let n = rng.gen_range(1..=max_n);
        let beta = rng.gen_range(beta_range.0..=beta_range.1);
        let a = random_a(rng, n, beta);
        let total = rng.gen_range(1..=max_inputs);
        let parts = rng.gen_range(1..=total);
        let bs: Vec<Matrix> = split_inputs(rng, total, parts)
            .into_iter()
            .map(|m| Matrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let refs: Vec<&Matrix> = bs.iter().collect();
        let b = matlib::hcat(n, &refs).unwrap();
        if well_conditioned(&a, &b, beta) {
            return (a, bs, beta);
        }
    }
}

/// A normalized plant with agents `1..=N`, `N ≤ max_agents`, that is jointly
/// controllable and observable, plus `β`.
pub fn random_plant(
    rng: &mut impl Rng,
    max_n: usize,
    max_agents: usize,
    beta_range: (f64, f64),
) -> (PlantModel, f64) {
    random_plant_in(rng, max_n, 1..=max_agents, beta_range)
}

/// Like [`random_plant`] with the agent count drawn from `agents`.
pub fn random_plant_in(
    rng: &mut impl Rng,
    max_n: usize,
    agents: std::ops::RangeInclusive<usize>,
    beta_range: (f64, f64),
) -> (PlantModel, f64) {
    loop {
        let n = rng.gen_range(1..=max_n);
        let agents = rng.gen_range(agents.clone());
        let beta = rng.gen_range(beta_range.0..=beta_range.1);
        let a = random_a(rng, n, beta);
        let channels = (1..=agents as NodeId).map(|id| {
            let m = rng.gen_range(1..=2.min(n));
            let p = rng.gen_range(1..=2.min(n));
            Channel::new(
                id,
                Matrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0)),
                Matrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0)),
            )
            .normalized()
        });
        let plant = PlantModel::with_channels(a, channels).unwrap();
        let (b, c) = plant.aggregate_all().unwrap();
        if well_conditioned(&plant.a, &b, beta)
            && well_conditioned(&plant.a.transpose(), &c.transpose(), beta)
        {
            return (plant, beta);
        }
    }
}

/// A connected graph on `ids`: a random spanning tree plus extra edges with
/// probability `extra`.
pub fn connected_graph(rng: &mut impl Rng, ids: &[NodeId], extra: f64) -> Graph {
    let mut order = ids.to_vec();
    order.shuffle(rng);
    let mut g = Graph::with_nodes(ids.iter().copied());
    for k in 1..order.len() {
        let parent = order[rng.gen_range(0..k)];
        g.add_edge(order[k], parent).unwrap();
    }
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            if !g.has_edge(i, j) && rng.gen_bool(extra) {
                g.add_edge(i, j).unwrap();
            }
        }
    }
    g
}

pub fn active_ids(p: &PlantModel) -> BTreeSet<NodeId> {
    p.channels.keys().copied().collect()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}
