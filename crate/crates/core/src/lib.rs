//! Consensus ADMM for inverse problems governed by several PDE forward models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod eit;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod incg;
pub mod metric;
pub mod model;
pub mod monolithic;
pub mod parallel;
pub mod qpact;
pub mod regularization;
pub mod selfcheck;
pub mod transform;

pub use error::{Error, Result};
