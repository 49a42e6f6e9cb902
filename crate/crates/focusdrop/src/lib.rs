//! File formats, CIFAR ingestion, experiment configs and the run/sweep
//! drivers behind the `focusdrop` command.

pub mod checkpoint;
pub mod cifar;
pub mod config;
mod error;
pub mod export;
pub mod kv;
pub mod metrics;
pub mod run;
pub mod snapshot;

pub use error::{Error, Result};
pub use focusdrop_core as core;
