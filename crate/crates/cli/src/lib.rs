//! Configuration-driven experiment runner for the East model laboratory.
//!
//! A run reads a flat `key = value` file, validates it, dispatches to the
//! simulation, estimation, exact or theory routines, and writes CSV outputs
//! plus a `manifest.txt` with SHA-256 checksums into the output directory.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigError, ExperimentConfig, Kind};
pub use run::{run_experiment, RunError, RunManifest};
