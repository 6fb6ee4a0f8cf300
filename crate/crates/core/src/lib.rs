#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod graph;
pub mod matlib;
pub mod plant;
pub mod sim;
pub mod verify;
pub mod agent;
pub mod analysis;
pub mod cli;
pub mod bass;
pub mod consensus;
pub mod instances;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use matlib::Matrix;
pub use plant::{Channel, PlantModel};
