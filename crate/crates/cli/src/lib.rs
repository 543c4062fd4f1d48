//! Command-line driver: config and dataset loading, subcommands, and atomic
//! artifact output.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod output;

pub use commands::{run, Command, Options};
pub use error::{CliError, CliResult};
