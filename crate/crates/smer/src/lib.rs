//! File formats, dataset ingestion and the command-line driver for the
//! `smer_core` emotion recognition toolkit.

mod bin;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod manifest;
pub mod preprocess;
pub mod report;
pub mod shard;
pub mod vocab;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use exec::Rayon;
pub use manifest::{Manifest, Split};
pub use shard::Shard;
