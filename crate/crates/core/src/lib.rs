//! Action-level elastic resource scheduling for agentic rollouts, plus a
//! deterministic trace-driven simulator to evaluate it.
//!
//! The pieces, bottom up:
//! - [`model`]: actions, unit specs, elasticity profiles, cluster specs.
//! - [`dp`]: optimal discrete allocation over a pluggable state operator.
//! - [`gpu`]: chunk algebra for 8-GPU nodes and the chunk-count DP operator.
//! - [`managers`]: simulated pool/quota, CPU and GPU managers.
//! - [`scheduler`]: FCFS candidate selection with greedy eviction.
//! - [`sim`]: traces, policies, the event loop and metrics.

pub mod cli;
pub mod config;
pub mod dp;
pub mod gpu;
pub mod managers;
pub mod model;
pub mod oracle;
pub mod scenarios;
pub mod scheduler;
pub mod sim;
