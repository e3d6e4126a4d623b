//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod equivalence;
pub mod fixtures;
pub mod oracle;
pub mod pipeline;
