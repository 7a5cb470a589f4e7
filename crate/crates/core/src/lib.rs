pub mod acceptance;
pub mod cli;
pub mod error;
pub mod estimate;
pub mod kernel;
pub mod quadrature;
pub mod rng;
pub mod schedule;
pub mod sgdsim;
pub mod stats;
pub mod tailindex;

pub use error::{Error, Result};
