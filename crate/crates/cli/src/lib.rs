//! Experiment orchestration for the `transduce` command.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod stubs;

pub use error::{CliError, CliResult};
