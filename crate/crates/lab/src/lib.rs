//! Experiment orchestration for slowmix: configuration, sweeps over
//! `(κ, seed)` grids, an append-only results store, summaries and plot data.

pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod results;
pub mod summary;

pub use config::{Experiment, ExperimentConfig};
pub use error::{LabError, LabResult};
pub use experiments::{run, RunOutcome};

/// Version string stamped on every result row.
pub const CODE_VERSION: &str = concat!("slowmix-", env!("CARGO_PKG_VERSION"));
