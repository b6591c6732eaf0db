//! Harness library behind the `rcti` binary: config parsing, CSV artifacts,
//! and the experiment pipeline.

pub mod config;
pub mod experiment;
pub mod manifest;
pub mod stats;
