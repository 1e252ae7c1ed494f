//! Trace-driven simulation of datacenter capacity plans.
//!
//! A portfolio of scenarios (topology, workload, allocation policy, operational phenomena) is
//! simulated repeatedly, and the aggregated metrics drive a capacity-plan recommendation.

pub mod demo;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod phenomena;
pub mod portfolio;
pub mod rng;
pub mod scheduler;
pub mod topology;
pub mod trace;

pub use error::{Error, Result};
