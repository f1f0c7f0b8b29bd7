//! Command-line front end for the shape-model toolkit: synthetic data
//! generation, model evaluation, clustering, landmark inference, lesion
//! screening, classification and an end-to-end reproduction run.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{Command, RunConfig};
pub use error::{CliError, CliResult};
