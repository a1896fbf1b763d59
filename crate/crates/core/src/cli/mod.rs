//! Config-driven front door: strict JSON configs, the experiment runner,
//! and deterministic report/CSV emission.

pub mod config;
pub mod runner;

pub use config::{load_config, ExperimentConfig, ExperimentKind};
pub use runner::{config_hash, emit_plot_data, run, write_outputs, RunReport};
