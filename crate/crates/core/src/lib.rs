pub mod contextfree;
pub mod detector;
pub mod error;
pub mod gateway;
pub mod hierarchy;
pub mod metrics;
pub mod nnkit;
pub mod rng;
pub mod sampler;
pub mod synthbench;

pub use error::{Error, Result};
