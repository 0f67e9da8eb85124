//! Experiment runner for the fair federated learning toolkit: configuration,
//! run artifacts, subcommands and the verification suites.

pub mod commands;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod output;
pub mod verify;

pub use commands::GlobalOpts;
pub use config::ExperimentConfig;
pub use error::CliError;
