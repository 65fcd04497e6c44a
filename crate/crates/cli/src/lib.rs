//! Command-line front end: configuration, dataset directories, file formats
//! and the `simulate`, `reconstruct`, `baseline`, `evaluate` and `sweep`
//! commands.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod grd;
pub mod png;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
