//! Files, run configuration, training drivers and the command-line
//! interface around `resotok-core`.

pub mod cli;
pub mod config;
pub mod curves;
pub mod error;
pub mod io;
pub mod metrics;
pub mod selfcheck;

pub use error::{Error, Result};
