//! Dynamic watermarking for linear stochastic control loops.
//!
//! Actuators superimpose private excitation on their inputs and test the
//! reported sensor stream for consistency with it; malicious sensors that
//! distort their reports with non-vanishing power are exposed.

pub mod adversary;
pub mod cli;
pub mod detect;
pub mod error;
pub mod harness;
pub mod linsys;
pub mod random;
pub mod residual;
pub mod signal;
pub mod watermark;

pub use error::{Error, Result};
