//! Split federated learning over heterogeneous edge networks.
//!
//! The crate models per-round and per-aggregation latency of split training,
//! bounds its convergence, jointly optimizes the client aggregation interval
//! and the per-device cut layers, and runs the training loop on a small
//! layered model to check the analysis against measurements.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bound;
pub mod engine;
pub mod error;
pub mod latency;
pub mod network;
pub mod optimizer;
pub mod profile;
pub mod scenario;

pub use error::{Error, Result};
