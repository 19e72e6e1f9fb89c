//! Workbench operations behind the `surrogacy` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod ipd;
pub mod output;

pub use commands::{cmd_fit, cmd_generate, cmd_report, cmd_simulate};
pub use config::RunConfig;
pub use error::{CliError, Result};
