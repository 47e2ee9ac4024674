//! File formats, run configuration, pipeline stages and the `kgmod`
//! command line, on top of `kgmod-core`.

pub mod cli;
pub mod config;
pub mod formats;
pub mod pipeline;
pub mod selftest;
