pub mod config;
pub mod dual_gnn;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod freq_decomp;
pub mod graph;
pub mod numerics;
pub mod objectives;
pub mod pipeline;
pub mod split;
pub mod trainer;

pub use error::{Error, Result};
