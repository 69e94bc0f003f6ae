//! Dynamic linear inverse imaging: a state-space model over frames, solved
//! as a MAP problem with ADMM whose quadratic step is a Kalman smoother.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod error;
pub mod kalman;
mod linalg;
pub mod metrics;
pub mod operators;
pub mod pgm;
pub mod priors;
pub mod random;
pub mod ssm;

#[cfg(test)]
mod oracle;

pub use error::{Error, Result};
