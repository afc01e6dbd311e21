#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod baselines;
pub mod bbox;
pub mod error;
pub mod experiment;
pub mod gradient_suite;
pub mod numerics;
pub mod odometry;
pub mod recurrent;
pub mod simulator;
pub mod trainer;
pub mod uncertainty;

pub use error::{Error, Result};
