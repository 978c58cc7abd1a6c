//! Configuration, trace ingestion, the scenario library and CSV emission.

pub mod config;
pub mod scenarios;
pub mod traces;
pub mod world;

use std::path::PathBuf;

use thiserror::Error;

use crate::broker::BrokerError;
use crate::nge::NgeError;
use crate::scheduler::SchedulerError;
use crate::workload::WorkloadError;

pub use config::ScenarioConfig;
pub use scenarios::{run_scenario, RunManifest};
pub use world::{run_fleet, FleetOutcome, FleetSpec, SlotSource};

/// One offending configuration key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub key: String,
    pub msg: String,
}

impl std::fmt::Display for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.msg)
    }
}

fn list(problems: &[Problem]) -> String {
    problems
        .iter()
        .map(|p| format!("\n  - {p}"))
        .collect::<String>()
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration:{}", list(.0))]
    Invalid(Vec<Problem>),
    #[error("{path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("{path}: line {line}: {msg}")]
    Trace {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Nge(#[from] NgeError),
}

impl HarnessError {
    pub fn invalid(key: impl Into<String>, msg: impl Into<String>) -> Self {
        HarnessError::Invalid(vec![Problem {
            key: key.into(),
            msg: msg.into(),
        }])
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<BrokerError> for HarnessError {
    fn from(e: BrokerError) -> Self {
        let BrokerError::Invalid { key, msg } = e;
        HarnessError::invalid(key, msg)
    }
}

impl From<WorkloadError> for HarnessError {
    fn from(e: WorkloadError) -> Self {
        match e {
            WorkloadError::Invalid { key, msg } => HarnessError::invalid(key, msg),
        }
    }
}
