//! Sparse SPD systems, classical and learned incomplete-Cholesky
//! preconditioners, and the training loop for the learned ones.

pub mod error;
pub mod features;
pub mod generate;
pub mod gnn;
pub mod krylov;
pub mod loss;
pub mod mtx;
pub mod precond;
pub mod sparse;
pub mod train;

pub use error::{Error, Result};
