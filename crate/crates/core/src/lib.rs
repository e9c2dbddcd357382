#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod matcore;
pub mod meanmodel;
pub mod optim;
pub mod simulate;
pub mod volcore;

pub use error::{Error, Result};
