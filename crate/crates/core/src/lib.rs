//! Grid-based discriminative state decoding.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod densities;
pub mod error;
pub mod inference;
pub mod io;
pub mod learning;
pub mod metrics;
pub mod prediction;
pub mod seed;
pub mod simulation;
pub mod ssm;
pub mod transition;

pub use error::{Error, Result};
