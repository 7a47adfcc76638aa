//! Out-of-sample evaluation of gravity equations and machine-learning
//! regressors on bilateral trade panels.

pub mod error;
pub mod gravity;
pub mod harness;
pub mod metrics;
pub mod ml;
pub mod panel;
pub mod ppml;
pub mod rng;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
