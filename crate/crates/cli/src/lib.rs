//! Experiment driver: configs, runs, sweeps, benchmarks and figures.

pub mod bench;
pub mod config;
pub mod experiment;
pub mod figures;
pub mod output;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, run_seed, run_sweep, RunOutcome, Session};
