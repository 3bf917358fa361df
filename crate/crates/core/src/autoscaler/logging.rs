use std::collections::BTreeMap;
use std::sync::Mutex;

use super::StageMetrics;
use crate::wire::transport::{Connection, Handler, Reply};
use crate::wire::{Body, Message, MetricsReport, WireError};

/// Collects metric windows from every daemon, ordered per stage.
#[derive(Debug, Default)]
pub struct LoggingService {
    history: Mutex<BTreeMap<String, Vec<StageMetrics>>>,
}

impl LoggingService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest(&self, report: &MetricsReport) {
        let mut history = self.history.lock().expect("metrics history");
        for m in &report.metrics {
            let windows = history.entry(m.stage.clone()).or_default();
            let pos = windows.partition_point(|w| w.window_end <= m.window_end);
            windows.insert(pos, m.clone());
        }
    }

    pub fn history(&self) -> BTreeMap<String, Vec<StageMetrics>> {
        self.history.lock().expect("metrics history").clone()
    }

    pub fn latest(&self, stage: &str) -> Option<StageMetrics> {
        self.history.lock().expect("metrics history").get(stage).and_then(|w| w.last().cloned())
    }
}

impl Handler for LoggingService {
    fn handle(&self, first: Message, conn: &mut Connection) -> Result<(), WireError> {
        let reply = Reply { conn, correlation_id: first.correlation_id };
        match first.body {
            Body::MetricsReport(report) => {
                self.ingest(&report);
                reply.ack(None)
            }
            Body::Ping(_) => reply.ack(Some("logging-service".into())),
            other => reply.error("Unsupported", format!("logging service does not handle {:?}", other.kind())),
        }
    }
}
