//! Files, reports and the command line around `fse_core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod report;

pub use error::{FseError, Result};
