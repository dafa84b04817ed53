//! Cost-sensitive multi-class classification.
//!
//! The crate provides:
//!
//! - [`penalty`]: penalty matrices (random error masks, hierarchical costs)
//! - [`loss`]: cross-entropy, bilinear and log-bilinear losses with analytic
//!   logit gradients through softmax
//! - [`model`]: a small fully connected classifier trained by minibatch SGD
//! - [`data`]: MNIST IDX parsing, Gaussian blob generation, down-sampling
//! - [`metrics`]: confusion matrices and the error-location metrics
//! - [`experiment`]: seeded sweep harness with CSV/JSON output

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod penalty;
pub mod seed;

pub use error::{Error, Result};
