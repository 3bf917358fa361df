//! Per-endpoint daemon: hosts deployed stages, runs their worker pools,
//! hands outputs to consumers over the configured channel, and reports
//! metric windows for the autoscaler.

mod node;
mod registry;
mod runtime;
mod service;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::storage::StorageError;

pub use node::{Daemon, DaemonConfig, DaemonStoreHandle, ManagerLink, MetricsSink, MEMORY_CHANNEL_CAPACITY};
pub use registry::{Invocation, StageFn, StageRegistry, TaskContext};
pub use runtime::{StageRuntime, TaskRecord, OUTPUTS_FILE, TASK_ATTEMPTS};
pub use service::DaemonService;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageState {
    Running,
    Draining,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub endpoint: String,
    pub state: StageState,
    /// Target worker count.
    pub workers: u32,
    pub live_workers: u32,
    pub workers_max: u32,
    pub busy: u32,
    pub queue_depth: u64,
    pub completed: u64,
    pub failed: u64,
    pub bytes_processed: u64,
}

impl StageStatus {
    pub fn is_idle(&self) -> bool {
        self.busy == 0 && self.queue_depth == 0
    }
}

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error("stage `{stage}` targets endpoint `{endpoint}`, not this daemon")]
    WrongEndpoint { stage: String, endpoint: String },
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("{0}")]
    UnknownEntry(String),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

impl DaemonError {
    pub fn code(&self) -> &'static str {
        match self {
            DaemonError::WrongEndpoint { .. } => "WrongEndpoint",
            DaemonError::UnknownStage(_) => "UnknownStage",
            DaemonError::UnknownEntry(_) => "UnknownEntry",
            DaemonError::Rejected(_) => "Rejected",
            DaemonError::Storage(e) => e.code(),
            DaemonError::Io(_) => "IoFailure",
        }
    }
}
