use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{compute_throughput, find_bottleneck, LoggingService, Policy, ScaleAction, ScaleCommand};
use crate::storage::now_secs;

/// Delivers a scale command to the daemon hosting the stage.
pub trait Dispatch: Send + Sync {
    fn dispatch(&self, command: &ScaleCommand) -> Result<(), String>;
}

/// One line of the autoscaler audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub interval: u64,
    pub time: f64,
    pub bottleneck: Option<String>,
    /// Smoothed bytes/s per stage.
    pub throughput: BTreeMap<String, f64>,
    pub command: Option<ScaleCommand>,
    pub dispatched: bool,
    pub error: Option<String>,
}

pub struct ControlLoop {
    logging: Arc<LoggingService>,
    policy: Mutex<Policy>,
    dispatch: Arc<dyn Dispatch>,
    audit: Option<Mutex<File>>,
    records: Mutex<Vec<DecisionRecord>>,
}

impl ControlLoop {
    pub fn new(logging: Arc<LoggingService>, policy: Policy, dispatch: Arc<dyn Dispatch>) -> Self {
        ControlLoop { logging, policy: Mutex::new(policy), dispatch, audit: None, records: Mutex::default() }
    }

    /// Appends every decision as a JSON line to `path`.
    pub fn with_audit_log(mut self, path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.audit = Some(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?));
        Ok(self)
    }

    pub fn records(&self) -> Vec<DecisionRecord> {
        self.records.lock().expect("records").clone()
    }

    pub fn policy(&self) -> Policy {
        self.policy.lock().expect("policy").clone()
    }

    /// Runs one control interval.
    pub fn step(&self) -> DecisionRecord {
        let mut policy = self.policy.lock().expect("policy");
        policy.advance();
        let table = compute_throughput(&self.logging.history(), policy.config().alpha);
        let mut record = DecisionRecord {
            interval: policy.interval(),
            time: now_secs(),
            bottleneck: None,
            throughput: table.entries.iter().map(|(s, e)| (s.clone(), e.throughput)).collect(),
            command: None,
            dispatched: false,
            error: None,
        };
        match find_bottleneck(&table) {
            Err(e) => record.error = Some(e.to_string()),
            Ok(report) => {
                record.bottleneck = Some(report.stage.clone());
                let command = policy.decide(&report);
                if command.action == ScaleAction::Noop {
                    policy.commit(&command, &table);
                } else {
                    match self.dispatch.dispatch(&command) {
                        Ok(()) => {
                            policy.commit(&command, &table);
                            record.dispatched = true;
                            tracing::info!(stage = %command.stage, action = ?command.action, target = command.target_workers, "scale");
                        }
                        // Left uncommitted, so the next interval decides again.
                        Err(e) => {
                            tracing::warn!(stage = %command.stage, error = %e, "scale command failed");
                            record.error = Some(e);
                        }
                    }
                }
                record.command = Some(command);
            }
        }
        drop(policy);
        if let Some(audit) = &self.audit {
            let line = serde_json::to_string(&record).expect("record serializes");
            let mut file = audit.lock().expect("audit log");
            if let Err(e) = writeln!(file, "{line}") {
                tracing::warn!(error = %e, "audit log write failed");
            }
        }
        self.records.lock().expect("records").push(record.clone());
        record
    }

    /// Runs `step` every `interval` on a background thread.
    pub fn spawn(self: Arc<Self>, interval: Duration) -> ControlLoopHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::Builder::new()
            .name("autoscaler".into())
            .spawn(move || {
                let mut next = Instant::now() + interval;
                while !flag.load(Ordering::Relaxed) {
                    let now = Instant::now();
                    if now < next {
                        std::thread::sleep((next - now).min(Duration::from_millis(50)));
                        continue;
                    }
                    self.step();
                    next += interval;
                }
            })
            .expect("spawn autoscaler thread");
        ControlLoopHandle { stop, thread: Some(thread) }
    }
}

pub struct ControlLoopHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ControlLoopHandle {
    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ControlLoopHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

#[cfg(test)]
mod tests {
    use super::super::{AutoscalerConfig, StageLimits, StageMetrics};
    use super::*;
    use crate::wire::MetricsReport;

    struct Flaky(Mutex<u32>);

    impl Dispatch for Flaky {
        fn dispatch(&self, _: &ScaleCommand) -> Result<(), String> {
            let mut n = self.0.lock().unwrap();
            *n += 1;
            if *n == 1 {
                Err("endpoint unreachable".into())
            } else {
                Ok(())
            }
        }
    }

    #[test]
    fn failed_dispatch_is_retried_and_audited() {
        let logging = Arc::new(LoggingService::new());
        logging.ingest(&MetricsReport {
            endpoint: "e".into(),
            metrics: vec![StageMetrics {
                stage: "B".into(),
                endpoint: "e".into(),
                window_start: 0.0,
                window_end: 1.0,
                tasks_done: 1,
                tasks_failed: 0,
                bytes_processed: 100,
                mean_service_time: 0.0,
                mean_wait_time: 0.0,
                workers: 1,
                queue_depth: 3,
                busy_workers: 1,
            }],
        });
        let limits = BTreeMap::from([("B".to_string(), StageLimits { workers_initial: 1, workers_max: 2 })]);
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("autoscaler.log");
        let cl = ControlLoop::new(logging, Policy::new(AutoscalerConfig::default(), limits), Arc::new(Flaky(Mutex::new(0))))
            .with_audit_log(&log)
            .unwrap();
        let first = cl.step();
        assert!(!first.dispatched && first.error.is_some());
        let second = cl.step();
        assert!(second.dispatched);
        assert_eq!(second.command.unwrap().target_workers, 2);
        assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);
    }
}
