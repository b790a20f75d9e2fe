//! Model-based clustering of categorical event sequences with mixtures of
//! first-order Markov chains.

pub mod chain;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod kmeans;
pub mod math;
pub mod mixture;
pub mod trace;

pub use error::{Error, Result};
