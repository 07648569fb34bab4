//! Front end for calibration runs: configuration, quote and report files, and
//! the `generate`, `calibrate`, `price` and `report` commands.

pub mod commands;
pub mod config;
pub mod tables;

pub use commands::{cmd_calibrate, cmd_generate, cmd_price, cmd_report, CliError, CliResult, Summary};
pub use config::RunConfig;

/// Environment variable overriding `--threads`.
pub const THREADS_ENV: &str = "LSVCAL_THREADS";
