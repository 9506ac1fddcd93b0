pub mod basis_rlearner;
pub mod error;
pub mod estimators;
pub mod graphs;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
