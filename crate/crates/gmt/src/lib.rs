//! Command line, file formats and benchmarks around [`gmt_core`].
//!
//! * [`tu`]: TU benchmark datasets.
//! * [`config`]: the `key = value` run configuration.
//! * [`report`]: CSV, SVG and `run.json` outputs.
//! * [`commands`]: `classify`, `reconstruct`, `bench-memory`, `bench-time`.

pub mod commands;
pub mod config;
pub mod report;
pub mod tu;
