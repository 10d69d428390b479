//! Configuration, orchestration and file output for the `phtaxis` binary.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod suite;
