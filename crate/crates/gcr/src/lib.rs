//! File formats, configuration, run manifests and command implementations
//! for the `gcr` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use gcr_core as core;
