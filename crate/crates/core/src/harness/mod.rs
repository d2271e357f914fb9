//! Scenario configuration, seeded runs, ground-truth metrics and trace files.

pub mod config;
pub mod metrics;
pub mod sim;
pub mod trace_io;

pub use config::Scenario;
pub use metrics::{nll_series, oracle_metrics, NllPoint, RunReport};
pub use sim::{run_scenario, run_scenario_with, RunOptions, Trace};
