//! Command-line front end: configs, file formats and the five commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
