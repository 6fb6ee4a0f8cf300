//! Undirected, optionally weighted communication graphs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlib::{self, Matrix};

/// Agent label. Ids persist across joins and leaves.
pub type NodeId = u32;

/// Default threshold for calling a Laplacian eigenvalue zero.
pub const CONNECTIVITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct Graph {
    nodes: BTreeSet<NodeId>,
    // keyed by (min, max)
    edges: BTreeMap<(NodeId, NodeId), f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GraphRepr {
    #[serde(default)]
    nodes: Vec<NodeId>,
    #[serde(default)]
    edges: Vec<(NodeId, NodeId)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

impl TryFrom<GraphRepr> for Graph {
    type Error = Error;

    fn try_from(r: GraphRepr) -> Result<Self> {
        let mut g = Graph::with_nodes(r.nodes);
        if let Some(w) = &r.weights {
            if w.len() != r.edges.len() {
                return Err(Error::InvalidGraph(format!(
                    "{} weights for {} edges",
                    w.len(),
                    r.edges.len()
                )));
            }
        }
        for (k, &(i, j)) in r.edges.iter().enumerate() {
            // edge lists may mention nodes not listed explicitly
            g.add_node(i);
            g.add_node(j);
            let w = r.weights.as_ref().map_or(1.0, |w| w[k]);
            g.add_weighted_edge(i, j, w)?;
        }
        Ok(g)
    }
}

impl From<Graph> for GraphRepr {
    fn from(g: Graph) -> Self {
        let weighted = g.edges.values().any(|&w| w != 1.0);
        GraphRepr {
            nodes: g.nodes.iter().copied().collect(),
            edges: g.edges.keys().copied().collect(),
            weights: weighted.then(|| g.edges.values().copied().collect()),
        }
    }
}

fn key(i: NodeId, j: NodeId) -> (NodeId, NodeId) {
    (i.min(j), i.max(j))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_nodes(ids: impl IntoIterator<Item = NodeId>) -> Self {
        Graph {
            nodes: ids.into_iter().collect(),
            edges: BTreeMap::new(),
        }
    }

    /// Unweighted graph from an edge list; endpoints become nodes.
    pub fn from_edges(edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let mut g = Graph::new();
        for &(i, j) in edges {
            g.add_node(i);
            g.add_node(j);
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    /// Path `ids[0] – ids[1] – ⋯`.
    pub fn path(ids: &[NodeId]) -> Self {
        let mut g = Graph::with_nodes(ids.iter().copied());
        for w in ids.windows(2) {
            g.edges.insert(key(w[0], w[1]), 1.0);
        }
        g
    }

    /// Cycle through `ids` in the given order. Fewer than three nodes gives a path.
    pub fn ring(ids: &[NodeId]) -> Self {
        let mut g = Graph::path(ids);
        if ids.len() >= 3 {
            g.edges.insert(key(ids[0], ids[ids.len() - 1]), 1.0);
        }
        g
    }

    pub fn star(center: NodeId, leaves: &[NodeId]) -> Self {
        let mut g = Graph::with_nodes(std::iter::once(center).chain(leaves.iter().copied()));
        for &l in leaves {
            if l != center {
                g.edges.insert(key(center, l), 1.0);
            }
        }
        g
    }

    pub fn complete(ids: &[NodeId]) -> Self {
        let mut g = Graph::with_nodes(ids.iter().copied());
        let nodes: Vec<_> = g.nodes.iter().copied().collect();
        for (a, &i) in nodes.iter().enumerate() {
            for &j in &nodes[a + 1..] {
                g.edges.insert((i, j), 1.0);
            }
        }
        g
    }

    pub fn add_node(&mut self, id: NodeId) {
        self.nodes.insert(id);
    }

    /// Removes the node and every incident edge. Returns whether it existed.
    pub fn remove_node(&mut self, id: NodeId) -> bool {
        self.edges.retain(|&(i, j), _| i != id && j != id);
        self.nodes.remove(&id)
    }

    pub fn add_edge(&mut self, i: NodeId, j: NodeId) -> Result<()> {
        self.add_weighted_edge(i, j, 1.0)
    }

    pub fn add_weighted_edge(&mut self, i: NodeId, j: NodeId, w: f64) -> Result<()> {
        if i == j {
            return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
        }
        for id in [i, j] {
            if !self.nodes.contains(&id) {
                return Err(Error::UnknownId(id));
            }
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidGraph(format!(
                "edge ({i}, {j}) has non-positive weight {w}"
            )));
        }
        self.edges.insert(key(i, j), w);
        Ok(())
    }

    pub fn remove_edge(&mut self, i: NodeId, j: NodeId) -> bool {
        self.edges.remove(&key(i, j)).is_some()
    }

    pub fn has_edge(&self, i: NodeId, j: NodeId) -> bool {
        self.edges.contains_key(&key(i, j))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids in ascending order; this is also the matrix index order.
    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().copied().collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == id)
    }

    /// Neighbours of `id` with edge weights.
    pub fn neighbors(&self, id: NodeId) -> Vec<(NodeId, f64)> {
        self.edges
            .iter()
            .filter_map(|(&(i, j), &w)| {
                if i == id {
                    Some((j, w))
                } else if j == id {
                    Some((i, w))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Subgraph induced on the given node ids.
    pub fn induced(&self, ids: &BTreeSet<NodeId>) -> Graph {
        Graph {
            nodes: self.nodes.intersection(ids).copied().collect(),
            edges: self
                .edges
                .iter()
                .filter(|(&(i, j), _)| ids.contains(&i) && ids.contains(&j))
                .map(|(&k, &w)| (k, w))
                .collect(),
        }
    }

    pub fn laplacian(&self) -> Matrix {
        let n = self.len();
        let idx: BTreeMap<NodeId, usize> =
            self.nodes.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let mut l = Matrix::zeros(n, n);
        for (&(i, j), &w) in &self.edges {
            let (a, b) = (idx[&i], idx[&j]);
            l[(a, b)] -= w;
            l[(b, a)] -= w;
            l[(a, a)] += w;
            l[(b, b)] += w;
        }
        l
    }

    /// Laplacian eigenvalues, ascending.
    pub fn laplacian_spectrum(&self) -> Result<Vec<f64>> {
        Ok(matlib::symmetric_eigen(&self.laplacian())?.0)
    }

    /// Algebraic connectivity λ₂(L).
    pub fn lambda2(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::Domain(format!(
                "lambda2 needs at least 2 nodes, graph has {}",
                self.len()
            )));
        }
        Ok(self.laplacian_spectrum()?[1].max(0.0))
    }

    /// Breadth-first connectivity test. The empty graph counts as connected.
    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.nodes.iter().next() else {
            return true;
        };
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for &(i, j) in self.edges.keys() {
            adj.entry(i).or_default().push(j);
            adj.entry(j).or_default().push(i);
        }
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &u in adj.get(&v).into_iter().flatten() {
                if seen.insert(u) {
                    queue.push_back(u);
                }
            }
        }
        seen.len() == self.len()
    }

    /// `R` and `Λ⁺` with `1ᵀR = 0`, `RᵀR = I` and `RᵀLR = Λ⁺`.
    ///
    /// Columns are eigenvectors of `L` for the nonzero eigenvalues in ascending
    /// order, each signed so its first nonzero entry is positive.
    pub fn r_matrix(&self) -> Result<(Matrix, Matrix)> {
        if !self.is_connected() {
            return Err(Error::Disconnected);
        }
        let n = self.len();
        if n <= 1 {
            return Ok((Matrix::zeros(n, 0), Matrix::zeros(0, 0)));
        }
        let (vals, vecs) = matlib::symmetric_eigen(&self.laplacian())?;
        let mut r = vecs.columns(1, n - 1).into_owned();
        for mut col in r.column_iter_mut() {
            let first = col.iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(1.0);
            if first < 0.0 {
                col.neg_mut();
            }
        }
        let lambda = Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(&vals[1..]));
        Ok((r, lambda))
    }
}

/// Lower bound `4/N²` on λ₂ of any connected unweighted graph with `N` nodes.
pub fn mohar_bound(n: usize) -> f64 {
    4.0 / (n as f64 * n as f64)
}
