//! Constant step-size SGD as a Markov chain: simulation of the chain and its
//! variants, closed-form ground truth in the linear-Gaussian case, and
//! Monte Carlo checks of stationary moment, concentration, contraction and
//! deviation bounds.

pub mod cli;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
pub use rng::RngStream;
