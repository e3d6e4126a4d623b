//! Causal collaborative filtering for recommendation exposure.
//!
//! The crate estimates how much showing an item to a user changes the chance
//! that the user buys it. It is organised around four pieces:
//!
//! * [`model`] factorizes the user × item × treatment outcome tensor with
//!   pairwise interactions only, and infers both potential outcomes of every
//!   user-item pair.
//! * [`rdd`] evaluates exposure effects with a regression discontinuity design
//!   whose running variable is the display position and whose cutoff is the
//!   position where the session ended.
//! * [`baselines`] and [`metrics`] hold the reference estimators and the
//!   ranking / estimation metrics used to compare methods.
//! * [`synth`] simulates browsing logs with planted potential outcomes so every
//!   estimator can be checked against a known answer.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints and
//! the command-line tool live in the companion `causcf` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod data;
pub mod effects;
mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rdd;
pub mod rng;
pub mod synth;

pub use error::{Error, Result, RowIssue};
