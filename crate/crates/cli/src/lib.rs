//! Experiment runner: JSON configs, multi-trial runs with trace, report
//! and certificate artifacts, and one-parameter sweeps.

pub mod config;
pub mod error;
pub mod experiment;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiment::{run_experiment, run_trials, sweep, sweep_in_memory, Aggregate, ExperimentSummary, SweepResult};
pub use pipeline::{run_trial, TrialOutcome, TrialReport, TrialTrace};
