//! Differentially private kernel inducing points.
//!
//! Distills a labeled dataset into a handful of synthetic points by
//! minimizing a kernel-ridge-regression loss with DP-SGD.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dp;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod kip;
pub mod linalg;
pub mod privacy;
pub mod scatternet;

pub use error::{Error, Result};
