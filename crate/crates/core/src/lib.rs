pub mod deps;
pub mod config;
pub mod diff;
pub mod eval;
pub mod error;
pub mod fixtures;
pub mod forge;
pub mod git;
pub mod lang;
pub mod metrics;
pub mod miner;
pub mod pathrules;
pub mod pipeline;
pub mod report;
pub mod sandbox;
pub mod store;
pub mod types;
pub mod validate;

pub use error::{Error, Result};
