//! Differentially private APPR-based decoupled GNN training.

pub mod accountant;
pub mod appr;
pub mod dp_appr;
pub mod error;
pub mod graph;
pub mod harness;
pub mod inference;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{DparError, Result};
