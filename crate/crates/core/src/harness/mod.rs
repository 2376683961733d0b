//! Experiment orchestration: configuration, the collect/train/run/report
//! stages and their files.

pub mod config;
pub mod logs;
pub mod pipeline;
pub mod report;

use thiserror::Error;

pub use config::{Cell, ExperimentConfig, Filter, Perturbation};
pub use pipeline::{collect, run_all, run_episodes, train_models, write_config, Context};
pub use report::{report, Reports};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("missing episode files for: {}", .0.join(", "))]
    MissingLogs(Vec<String>),
}

impl HarnessError {
    /// 2 for bad configuration or mismatched inputs, 3 for failures while
    /// running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 2,
            HarnessError::Runtime(_) | HarnessError::MissingLogs(_) => 3,
        }
    }
}
