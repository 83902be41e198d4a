//! File formats, ingestion and command execution for the `mixhmm` binary.

pub mod docs;
pub mod error;
pub mod io;
pub mod run;

pub use error::{CliError, Result};
