//! Batch driver for the plaplab experiments: configuration, deterministic
//! parallel execution and report emission.
//!
//! Every command writes its reports into an output directory together with
//! `manifest.json`. Reports carry the SHA-256 hash of the resolved
//! configuration and no timestamps, so a repeated run with the same
//! configuration reproduces them byte for byte.

pub mod config;
pub mod error;
pub mod estimates;
pub mod report;
pub mod run;
pub mod solve;
pub mod verify;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, Result};
pub use run::Outcome;
