//! Simulation and verification of McKean-Vlasov particle systems with common noise.

pub mod assignment;
pub mod error;
pub mod harness;
pub mod metric;
pub mod model;
pub mod noise;
pub mod ot;
pub mod sde;
pub mod stationary;

pub use error::{Error, Result};
