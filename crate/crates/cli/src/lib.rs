//! Experiment runners, property checks and the `gpps` command line.

pub mod check;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod oracle;
pub mod output;
pub mod stats;
