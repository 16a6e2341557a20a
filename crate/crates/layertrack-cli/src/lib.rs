//! Library surface of the `layertrack` binary: experiment configuration,
//! the five pipeline commands, and the report tables they produce. The
//! binary is a thin clap dispatcher over these.

pub mod commands;
pub mod config;
pub mod report;
