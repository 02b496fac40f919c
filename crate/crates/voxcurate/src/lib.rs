//! File formats, configuration, media providers and the pipeline stages
//! behind the `voxcurate` command.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod layout;
pub mod provider;
pub mod report;
pub mod stages;
pub mod synthetic;
