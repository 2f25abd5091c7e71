//! Library half of the command line: config loading/validation and the
//! subcommand runners, exposed so integration tests can drive them directly.

pub mod config;
pub mod runner;

pub use config::{load_config, RunConfig};
pub use runner::{
    run_diagnostics, run_experiment, run_multiseed, run_oracles, run_sweep, CliError, CliResult,
};
