//! Experiment runner for `crittree`: configuration, one function per
//! experiment, the acceptance suite and report writing.

pub mod acceptance;
pub mod app;
pub mod config;
pub mod experiments;
pub mod output;

pub use config::ExperimentConfig;
pub use experiments::{run, Outcome};
