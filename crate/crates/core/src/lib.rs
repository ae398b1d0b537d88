//! Tabular synthetic data generation with a PPO-trained stochastic generator,
//! plus privacy, utility and fidelity metrics for the generated data.

pub mod cli;
pub mod critic;
pub mod datastore;
pub mod diffcore;
pub mod error;
pub mod evalsuite;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
