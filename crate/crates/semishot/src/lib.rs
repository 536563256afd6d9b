//! File formats, run configuration and the `semishot` command line around
//! `semishot-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use error::{CliError, Result};
