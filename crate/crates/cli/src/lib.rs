//! Experiment runner for the DAP simulator: config parsing, traces and
//! summaries, the topology/size study, and assumption checks.

pub mod commands;
pub mod config;

pub use commands::{cmd_run, cmd_table1, cmd_validate, Exit, RunOverrides};
pub use config::ExperimentConfig;
