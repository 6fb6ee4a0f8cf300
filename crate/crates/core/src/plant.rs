//! Multi-channel LTI plant `ẋ = Ax + Σ Bᵢuᵢ`, `yᵢ = Cᵢx`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::matlib::{self, Matrix};

/// Rank threshold relative to the largest singular value.
pub const RANK_RTOL: f64 = 1e-9;

/// One input/output channel, owned by the agent with the same id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub id: NodeId,
    #[serde(rename = "B", with = "matlib::rows")]
    pub input: Matrix,
    #[serde(rename = "C", with = "matlib::rows")]
    pub output: Matrix,
    /// `‖Bᵢ‖` before normalization.
    #[serde(default = "one")]
    pub input_scale: f64,
    /// `‖Cᵢ‖` before normalization.
    #[serde(default = "one")]
    pub output_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Channel {
    pub fn new(id: NodeId, input: Matrix, output: Matrix) -> Self {
        Channel {
            id,
            input,
            output,
            input_scale: 1.0,
            output_scale: 1.0,
        }
    }

    /// Rescales `Bᵢ` and `Cᵢ` to unit induced norm, recording the original
    /// norms. Zero maps pass through with scale 1.
    pub fn normalized(&self) -> Channel {
        let nb = matlib::induced_2norm(&self.input);
        let nc = matlib::induced_2norm(&self.output);
        let (input, sb) = if nb > 0.0 {
            (&self.input / nb, nb)
        } else {
            (self.input.clone(), 1.0)
        };
        let (output, sc) = if nc > 0.0 {
            (&self.output / nc, nc)
        } else {
            (self.output.clone(), 1.0)
        };
        Channel {
            id: self.id,
            input,
            output,
            input_scale: self.input_scale * sb,
            output_scale: self.output_scale * sc,
        }
    }

    pub fn inputs(&self) -> usize {
        self.input.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.output.nrows()
    }

    /// Plant input produced by an internal (normalized) command `u'`: `u = u'/‖Bᵢ‖`.
    pub fn to_plant_input(&self, u_internal: &Matrix) -> Matrix {
        u_internal / self.input_scale
    }

    /// Internal (normalized) measurement from the raw one: `y' = y/‖Cᵢ‖`.
    pub fn to_internal_output(&self, y: &Matrix) -> Matrix {
        y / self.output_scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    #[serde(rename = "A", with = "matlib::rows")]
    pub a: Matrix,
    #[serde(with = "channel_list")]
    pub channels: BTreeMap<NodeId, Channel>,
}

mod channel_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<NodeId, Channel>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<NodeId, Channel>, D::Error> {
        let v: Vec<Channel> = Vec::deserialize(d)?;
        let mut out = BTreeMap::new();
        for c in v {
            if out.insert(c.id, c).is_some() {
                return Err(serde::de::Error::custom("duplicate channel id"));
            }
        }
        Ok(out)
    }
}

impl PlantModel {
    pub fn new(a: Matrix) -> Result<Self> {
        matlib::ensure_square(&a, "plant A")?;
        Ok(PlantModel {
            a,
            channels: BTreeMap::new(),
        })
    }

    pub fn with_channels(a: Matrix, channels: impl IntoIterator<Item = Channel>) -> Result<Self> {
        let mut p = PlantModel::new(a)?;
        for c in channels {
            p.add_channel(c)?;
        }
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn add_channel(&mut self, c: Channel) -> Result<()> {
        let n = self.n();
        if c.input.nrows() != n || c.output.ncols() != n {
            return Err(Error::dim(format!(
                "channel {}: B is {}x{}, C is {}x{}, state dimension {n}",
                c.id,
                c.input.nrows(),
                c.input.ncols(),
                c.output.nrows(),
                c.output.ncols()
            )));
        }
        if self.channels.contains_key(&c.id) {
            return Err(Error::config(
                "plant.channels",
                format!("duplicate channel id {}", c.id),
            ));
        }
        self.channels.insert(c.id, c);
        Ok(())
    }

    /// Checks dimensions again, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        matlib::ensure_square(&self.a, "plant A")?;
        let mut copy = PlantModel::new(self.a.clone())?;
        for c in self.channels.values() {
            copy.add_channel(c.clone())?;
        }
        Ok(())
    }

    pub fn channel(&self, id: NodeId) -> Result<&Channel> {
        self.channels.get(&id).ok_or(Error::UnknownId(id))
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.channels.keys().copied().collect()
    }

    /// Same plant with every channel normalized.
    pub fn normalized(&self) -> PlantModel {
        PlantModel {
            a: self.a.clone(),
            channels: self
                .channels
                .iter()
                .map(|(&id, c)| (id, c.normalized()))
                .collect(),
        }
    }

    /// `B = [Bᵢ …]` and `C = [Cᵢ; …]` over the active ids in ascending order.
    pub fn aggregate(&self, active: &BTreeSet<NodeId>) -> Result<(Matrix, Matrix)> {
        let chans = active
            .iter()
            .map(|&id| self.channel(id))
            .collect::<Result<Vec<_>>>()?;
        let n = self.n();
        let bs: Vec<&Matrix> = chans.iter().map(|c| &c.input).collect();
        let cs: Vec<&Matrix> = chans.iter().map(|c| &c.output).collect();
        Ok((matlib::hcat(n, &bs)?, matlib::vcat(n, &cs)?))
    }

    pub fn aggregate_all(&self) -> Result<(Matrix, Matrix)> {
        self.aggregate(&self.channels.keys().copied().collect())
    }
}

/// Kalman controllability matrix `[B, AB, …, Aⁿ⁻¹B]`.
pub fn controllability_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matlib::ensure_square(a, "A")?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::dim(format!("B has {} rows, A is {n}x{n}", b.nrows())));
    }
    let mut blocks = Vec::with_capacity(n);
    let mut cur = b.clone();
    for _ in 0..n {
        let next = a * &cur;
        blocks.push(cur);
        cur = next;
    }
    let refs: Vec<&Matrix> = blocks.iter().collect();
    matlib::hcat(n, &refs)
}

pub fn is_controllable(a: &Matrix, b: &Matrix) -> bool {
    match controllability_matrix(a, b) {
        Ok(k) => a.nrows() == 0 || matlib::rank(&k, RANK_RTOL) == a.nrows(),
        Err(_) => false,
    }
}

pub fn is_observable(a: &Matrix, c: &Matrix) -> bool {
    is_controllable(&a.transpose(), &c.transpose())
}

/// The planar load model: state `[p − p^d, v]`, force along `(cos θ, sin θ)`,
/// position measured.
pub mod load {
    use super::*;

    pub fn a() -> Matrix {
        let mut a = Matrix::zeros(4, 4);
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        a
    }

    pub fn input(theta: f64, mass: f64) -> Matrix {
        Matrix::from_column_slice(4, 1, &[0.0, 0.0, theta.cos() / mass, theta.sin() / mass])
    }

    pub fn output() -> Matrix {
        let mut c = Matrix::zeros(2, 4);
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 1.0;
        c
    }

    pub fn channel(id: NodeId, theta: f64, mass: f64) -> Channel {
        Channel::new(id, input(theta, mass), output())
    }

    pub fn plant(angles: &[(NodeId, f64)], mass: f64) -> Result<PlantModel> {
        PlantModel::with_channels(a(), angles.iter().map(|&(id, th)| channel(id, th, mass)))
    }
}
