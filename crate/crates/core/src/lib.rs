//! Federated-learning simulator for measuring loss-landscape constants
//! (`mu`, `L`, `G`), the FedAvg convergence bound they feed, and how well the
//! local constants predict each node's contribution to training.

pub mod analysis;
pub mod bound;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod flsim;
pub mod model;
pub mod probe;
pub mod report;
pub mod seed;
pub mod selftest;

pub use error::{Error, Result};
