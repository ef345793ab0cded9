//! Deterministic cross-silo personalized federated learning simulator.

pub mod data;
pub mod error;
pub mod eval;
pub mod fed;
pub mod objectives;
pub mod segnet;
pub mod tensor;

pub use error::{Error, Result};
