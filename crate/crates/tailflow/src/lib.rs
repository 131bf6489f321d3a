//! Files, configuration, the benchmark harness and verification for
//! log-space flow matching.
//!
//! The numerical work lives in [`tailflow_core`]; this crate adds what needs
//! an operating system:
//!
//! - [`io`]: CSV samples with a JSON metadata sidecar;
//! - [`checkpoint`]: a versioned binary format for trained models;
//! - [`config`]: the TOML experiment schema;
//! - [`bench`]: seeded experiment grids with a worker pool, resumable
//!   persistence and median aggregation;
//! - [`verify`]: the Monte Carlo theory and oracle checks.

// Comparisons are written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod checkpoint;
pub mod config;
mod error;
pub mod io;
pub mod verify;

pub use error::{Error, Result};
pub use tailflow_core as core;
