//! Library behind the `bnn-mcmc` command: run configuration, artifact
//! formats and the command implementations.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult, Failure};
