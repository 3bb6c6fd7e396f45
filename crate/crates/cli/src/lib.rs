//! Configuration, I/O and experiment orchestration for the `codedcam` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod scenes;

pub use commands::{run, Cli, Command};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use pipeline::Experiment;
