//! Heterogeneous base learners and out-of-fold stacking.

pub mod forest;
pub mod logistic;
pub mod mlp;
pub mod stacking;

pub use forest::*;
pub use logistic::*;
pub use mlp::*;
pub use stacking::*;
