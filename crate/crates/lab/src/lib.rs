//! Experiment harness for `dpfl-core`: TOML configs, binary dataset and
//! checkpoint formats, CSV outputs with run manifests, and the `dpfl`
//! command-line front end.

pub mod bounds;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod manifest;
pub mod report;
pub mod seeds;

pub use config::LabConfig;
pub use error::{LabError, Result};
