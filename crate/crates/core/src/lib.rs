//! Differential nearest neighbors regression.
//!
//! Predictions average first-order Taylor expansions around the nearest
//! training points, with the local gradients estimated from each point's own
//! neighbors. Neighbor search runs under a learned per-feature scaling.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod featscale;
pub mod gradient;
pub mod inspect;
pub mod linalg;
pub mod metrics;
pub mod nnindex;
pub mod predictor;
pub mod theory;

pub use error::{Error, Result};
