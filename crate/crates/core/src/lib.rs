//! Log-space flow matching for heavy-tailed data.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure computation:
//! the coordinate-wise soft-log transform family, extreme-value primitives,
//! copula samplers, a small MLP velocity network with hand-written gradients,
//! flow-matching training and sampling, and the evaluation metrics. File
//! formats, configuration and the CLI live in the `tailflow` crate.
//!
//! The `std` feature only switches on runtime CPU feature detection in the
//! matrix-multiply kernel; the two builds may differ in the last bits.
#![no_std]
// Comparisons are written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datagen;
mod error;
pub mod evt;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod special;
pub mod transforms;

pub use error::{Error, Result};
pub use linalg::Matrix;
