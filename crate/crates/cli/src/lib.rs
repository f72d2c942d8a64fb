//! Command-line pipeline and live-session bridge around `sharedctl`.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod protocol;
pub mod serve;

pub use commands::dispatch;
pub use error::{CliError, CliResult};
