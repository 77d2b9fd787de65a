//! Dense and sparse matrices, a reverse-mode tape over the handful of
//! primitives the model uses, and the Adam updater.

mod adam;
mod dense;
mod gradcheck;
mod params;
mod sparse;
mod tape;

pub use adam::AdamState;
pub use dense::DenseMatrix;
pub use gradcheck::grad_check;
pub use params::{ParamId, ParamStore, Parameter};
pub use sparse::SparseAdjacency;
pub use tape::{log_sum_exp, sigmoid, Gradients, Tape, Var};
