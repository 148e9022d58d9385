//! Causal interventional differential attribution of regulator–target
//! relationships between two observational conditions.

pub mod attribution;
pub mod baselines;
pub mod data;
pub mod differential;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
pub use rng::RngSeed;
