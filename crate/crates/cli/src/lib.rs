//! Library side of the `umargin` binary, so the commands can be driven from tests.

pub mod commands;
pub mod config;
pub mod error;
pub mod gradsuite;
pub mod output;

pub use config::RunConfig;
pub use error::CliError;
