//! Command-line runner, scenario files, behavior-cloning pipeline, the
//! acceptance battery and the live telemetry service.

pub mod bc;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod serve;
pub mod suite;

pub use error::HarnessError;
