//! File formats, checkpoints, reports and the `causcf` command-line tool
//! around the `causcf-core` estimators.

pub use causcf_core as core;

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod reports;

pub use error::{Error, Result};
