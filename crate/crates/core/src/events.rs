//! Instrumentation of the inter-stage data flow.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowStep {
    Push,
    Publish,
    Subscribe,
    Transfer,
    InputWrite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEvent {
    pub step: FlowStep,
    pub item_id: String,
    /// Producer stage for push/publish, consumer stage otherwise.
    pub stage: String,
    pub store: String,
}

/// Shared, ordered record of flow events. Cloning shares the log.
#[derive(Debug, Clone, Default)]
pub struct EventLog(Arc<Mutex<Vec<FlowEvent>>>);

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, step: FlowStep, item_id: &str, stage: &str, store: &str) {
        tracing::trace!(?step, item_id, stage, store, "flow");
        self.0.lock().expect("event log").push(FlowEvent {
            step,
            item_id: item_id.to_string(),
            stage: stage.to_string(),
            store: store.to_string(),
        });
    }

    pub fn snapshot(&self) -> Vec<FlowEvent> {
        self.0.lock().expect("event log").clone()
    }
}

/// Records into the log when one is attached.
pub(crate) fn record(log: &Option<EventLog>, step: FlowStep, item_id: &str, stage: &str, store: &str) {
    if let Some(log) = log {
        log.record(step, item_id, stage, store);
    }
}

/// Outcome of checking every network delivery in a log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowAudit {
    /// Deliveries to a consumer stage, one per `Transfer` event.
    pub executions: usize,
    pub violations: Vec<String>,
}

/// Checks that each delivery to a consumer stage was preceded by the item's
/// push, publish and the consumer's subscribe, in that order, and followed
/// by the write into the consumer's input.
pub fn audit_flows(events: &[FlowEvent]) -> FlowAudit {
    let mut audit = FlowAudit::default();
    let last_before = |end: usize, f: &dyn Fn(&FlowEvent) -> bool| events[..end].iter().rposition(f);
    for (t, ev) in events.iter().enumerate() {
        if ev.step != FlowStep::Transfer || ev.stage.is_empty() {
            continue;
        }
        audit.executions += 1;
        let same = |step: FlowStep, consumer: bool| {
            move |e: &FlowEvent| e.step == step && e.item_id == ev.item_id && (!consumer || e.stage == ev.stage)
        };
        let sub = last_before(t, &same(FlowStep::Subscribe, true));
        let publ = sub.and_then(|s| last_before(s, &same(FlowStep::Publish, false)));
        let push = publ.and_then(|p| last_before(p, &same(FlowStep::Push, false)));
        let write = events[t + 1..].iter().position(same(FlowStep::InputWrite, true));
        let missing = [(push, "push"), (publ, "publish"), (sub, "subscribe"), (write, "input-write")]
            .into_iter()
            .filter(|(found, _)| found.is_none())
            .map(|(_, step)| step)
            .collect::<Vec<_>>();
        if !missing.is_empty() {
            audit.violations.push(format!("item {} to `{}`: no {} in order", ev.item_id, ev.stage, missing.join(", ")));
        }
    }
    audit
}
