//! Toy data, training, retrieval metrics, and gradient checking.

pub mod toy;
pub mod eval;
pub mod gradcheck;
pub mod data;
pub mod train;
pub mod experiment;
