//! Predicts LLM serving latency and throughput from operator-level latency
//! data, and searches parallelism, batching and serving-mode choices for
//! SLA-compliant Pareto-optimal configurations.

pub mod error;
pub mod estimator;
pub mod generator;
pub mod model;
pub mod moe_load;
pub mod perfdb;
pub mod search;
pub mod serving_modes;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
