#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotic;
pub mod empirical;
pub mod error;
pub mod estimation;
pub mod format;
pub mod ingestion;
pub mod markov;
pub mod model;
pub mod normal;
pub mod simulation;

pub use error::{Error, Result};
