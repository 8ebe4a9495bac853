//! Recommendation unlearning: data preparation, selection of users to
//! forget, recommender training, exact and approximate unlearning, and
//! evaluation of utility, forgetting completeness, efficiency and fairness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod harness;
pub mod model;
pub mod rng;
pub mod unlearn;

pub use error::{Error, Result};
