//! Throughput-driven worker autoscaling.
//!
//! Daemons report per-stage [`StageMetrics`] windows to a [`LoggingService`].
//! Each control interval the loop smooths every stage's byte throughput,
//! takes the stage with the lowest throughput as the bottleneck, and emits at
//! most one [`ScaleCommand`]: add a worker (bounded by the stage's core cap),
//! remove the worker added last if throughput degraded after the add, or do
//! nothing.

mod control;
mod logging;
mod policy;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use control::{ControlLoop, ControlLoopHandle, DecisionRecord, Dispatch};
pub use logging::LoggingService;
pub use policy::{AutoscalerConfig, Policy, StageLimits};

/// One reporting window of a stage's measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub endpoint: String,
    /// Window bounds, seconds since the Unix epoch.
    pub window_start: f64,
    pub window_end: f64,
    pub tasks_done: u64,
    pub tasks_failed: u64,
    /// Input bytes of the tasks completed in the window.
    pub bytes_processed: u64,
    pub mean_service_time: f64,
    pub mean_wait_time: f64,
    pub workers: u32,
    /// Items waiting at the end of the window.
    pub queue_depth: u64,
    /// Workers busy at the end of the window.
    pub busy_workers: u32,
}

impl StageMetrics {
    pub fn window_secs(&self) -> f64 {
        self.window_end - self.window_start
    }

    /// Bytes per second over the window; 0 for a degenerate window.
    pub fn throughput(&self) -> f64 {
        let len = self.window_secs();
        if len > 0.0 {
            self.bytes_processed as f64 / len
        } else {
            0.0
        }
    }

    pub fn is_idle(&self) -> bool {
        self.tasks_done == 0 && self.queue_depth == 0 && self.busy_workers == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputEntry {
    /// Smoothed throughput, bytes/s.
    pub throughput: f64,
    /// Inactive stages are skipped by the bottleneck search.
    pub active: bool,
    pub mean_wait_time: f64,
    pub workers: u32,
    pub queue_depth: u64,
    /// Number of windows folded into `throughput`.
    pub windows: usize,
}

/// Per-stage smoothed throughput (bytes/s).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ThroughputTable {
    pub entries: BTreeMap<String, ThroughputEntry>,
}

impl ThroughputTable {
    pub fn get(&self, stage: &str) -> Option<&ThroughputEntry> {
        self.entries.get(stage)
    }

    /// Scales every throughput by `factor`.
    pub fn scaled(&self, factor: f64) -> ThroughputTable {
        let mut out = self.clone();
        for e in out.entries.values_mut() {
            e.throughput *= factor;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckReport {
    pub stage: String,
    pub throughput: f64,
    pub table: ThroughputTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleAction {
    AddWorker,
    RemoveWorker,
    Noop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleCommand {
    pub stage: String,
    pub action: ScaleAction,
    pub target_workers: u32,
    pub reason: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AutoscaleError {
    #[error("no active stages to scale")]
    NoActiveStages,
}

/// Smoothed per-stage throughput over a metrics history. Windows must be in
/// time order per stage. Each stage's throughput is the EWMA
/// `s_k = alpha * x_k + (1 - alpha) * s_(k-1)`, seeded with the first window.
pub fn compute_throughput(history: &BTreeMap<String, Vec<StageMetrics>>, alpha: f64) -> ThroughputTable {
    let entries = history
        .iter()
        .filter_map(|(stage, windows)| {
            let latest = windows.last()?;
            let mut smoothed: Option<f64> = None;
            for w in windows {
                let x = w.throughput();
                smoothed = Some(match smoothed {
                    None => x,
                    Some(s) => alpha * x + (1.0 - alpha) * s,
                });
            }
            Some((
                stage.clone(),
                ThroughputEntry {
                    throughput: smoothed.unwrap_or(0.0),
                    active: !latest.is_idle(),
                    mean_wait_time: latest.mean_wait_time,
                    workers: latest.workers,
                    queue_depth: latest.queue_depth,
                    windows: windows.len(),
                },
            ))
        })
        .collect();
    ThroughputTable { entries }
}

/// The active stage with minimum throughput. Ties go to the larger mean
/// waiting time, then to the smaller stage name.
pub fn find_bottleneck(table: &ThroughputTable) -> Result<BottleneckReport, AutoscaleError> {
    let (stage, entry) = table
        .entries
        .iter()
        .filter(|(_, e)| e.active)
        .min_by(|(a_name, a), (b_name, b)| {
            a.throughput
                .total_cmp(&b.throughput)
                .then_with(|| b.mean_wait_time.total_cmp(&a.mean_wait_time))
                .then_with(|| a_name.cmp(b_name))
        })
        .ok_or(AutoscaleError::NoActiveStages)?;
    Ok(BottleneckReport { stage: stage.clone(), throughput: entry.throughput, table: table.clone() })
}
