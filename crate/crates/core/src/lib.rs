//! Learning driving policies from expert interventions with predicted-rollout
//! preference bootstrapping.

pub mod config;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod expert;
pub mod learning;
pub mod numerics;
pub mod predictor;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
