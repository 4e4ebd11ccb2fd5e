//! Experiment plumbing for PC-ODE models: configs, checkpoints, run
//! manifests, held-out metrics, capacity sweeps and planning benchmarks.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod manifest;
pub mod runner;

pub use config::{EpsilonSource, ExperimentConfig, Preset};
pub use error::{BenchError, Result};
