//! Simulation, quasi-likelihood inference and limit-law Monte Carlo for
//! ACD(1) duration models observed on a fixed time span `[0, T]`.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acd_model;
pub mod cli;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mle;
pub mod report;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod tail;

pub use error::{AcdError, Result};
