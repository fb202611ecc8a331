//! Config-driven experiment runner around the annealed transport-map core.

pub mod cache;
pub mod config;
pub mod runner;

pub use config::{Experiment, ExperimentConfig};
pub use runner::{emit_plots, resume, run, validate, CliError, RunOptions, RunSummary};
