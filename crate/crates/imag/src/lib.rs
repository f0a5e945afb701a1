//! File formats and the `imag` command line around `imag-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod records;
pub mod report;
pub mod split;

pub use error::{Error, Result};
