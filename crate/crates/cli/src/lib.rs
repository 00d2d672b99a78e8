//! Training, evaluation, ablation and ranking export for the re-ID
//! baseline, driven by sectioned `key=value` run configurations.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod train;

pub use config::RunConfig;
pub use error::CliError;
