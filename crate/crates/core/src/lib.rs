//! Online federated multi-kernel learning with random Fourier features.
//!
//! A dictionary of shift-invariant kernels is approximated with random
//! features; each client keeps personalized multiplicative weights over the
//! kernels, picks a budgeted random subset each round, and sends
//! importance-weighted parameter updates that the server averages into the
//! shared per-kernel model. The crate bundles the engine, the baselines it
//! is compared against, dataset/partition tooling, regret metrics, and a
//! reproducible experiment harness behind the `pofmkl` CLI.

// `!(x > 0.0)`-style guards are NaN-rejecting on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod client;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod server;

pub use error::{Error, Result};
