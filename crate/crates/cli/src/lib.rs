//! Deterministic experiment runner for `gmpp-core`: configuration, stream
//! generation or import, engine execution, traces and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;

pub use commands::{cmd_run, cmd_sweep, cmd_verify, Exit};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
