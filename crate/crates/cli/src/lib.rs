//! Command-line harness: experiment configs, method dispatch and geomean
//! reports over result CSVs.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, GraphSource, Hyper, Method, TopologySource};
pub use error::CliError;
pub use report::{geomean, summarize, ResultRow, SummaryRow};
