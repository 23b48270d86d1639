//! File formats, checkpoints, experiment configuration and the command-line
//! runner for [`s2daft_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod report;

pub use error::{CliError, Result};
