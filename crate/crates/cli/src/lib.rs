//! Experiment runner for multi-index gradient flow studies.

pub mod check;
pub mod config;
pub mod error;
pub mod run;

pub use error::CliError;
