//! Command-line front end for KSD-Bayes: experiment configs, data IO and
//! the experiment drivers behind the `ksd-bayes` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod generate;
pub mod io;
pub mod spec;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiments::{run_experiment, RunReport};
