//! Experiment runner: config parsing, multi-chain execution and reports.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod functions;
pub mod runner;
pub mod table;

pub use config::{ExperimentKind, RunConfig};
pub use table::Table;
