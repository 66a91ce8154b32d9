//! Configured experiments: validation, runners and report output.

mod config;
mod report;
mod run;

pub use config::*;
pub use report::{write_atomic, Check, DataTable, ReportBundle, Status};
pub use run::run_experiment;

/// Exit code for configuration errors.
pub const EXIT_VALIDATION: i32 = 2;
