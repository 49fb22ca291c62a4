//! Experiment orchestration: configuration, Monte Carlo campaigns,
//! statistics and report files.

use std::path::PathBuf;

pub mod campaign;
pub mod config;
pub mod report;
pub mod stats;

pub use campaign::{run_campaign, synthesize, CampaignOptions, CampaignResult, ModeSelection, Synthesis};
pub use config::{Experiment, ExperimentConfig, LambdaSetting};
pub use report::{emit_reports, ReportPaths};
pub use stats::{cost_statistics, histogram, paired_comparison, CostStatistics, Histogram, PairedComparison};

/// Exit status for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for numerical failures.
pub const EXIT_SOLVER: i32 = 3;
/// Exit status for file-system failures.
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error("invalid config field `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: crate::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse { .. } | HarnessError::Config { .. } => EXIT_CONFIG,
            HarnessError::Solver { .. } => EXIT_SOLVER,
            HarnessError::Io { .. } => EXIT_IO,
        }
    }

    pub(crate) fn solver(context: impl Into<String>) -> impl FnOnce(crate::Error) -> HarnessError {
        let context = context.into();
        move |source| HarnessError::Solver { context, source }
    }
}
