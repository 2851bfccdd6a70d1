//! Command-line front end, metrics and latency measurement for `blocksync`.

pub mod cli;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod report;
pub mod scenario;
pub mod synth;
pub mod timing;

pub use error::{HarnessError, Result};
pub use metrics::{edit_distance, EditCounts, ErrorSummary};
pub use report::{DecodeMode, Summary, UtteranceResult, SCHEMA_VERSION};
pub use timing::{measure_run, rtf, Clock, Clocks, ManualClock, RunInput, ThreadCpuClock, WallClock};
