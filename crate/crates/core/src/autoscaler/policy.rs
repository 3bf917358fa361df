use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BottleneckReport, ScaleAction, ScaleCommand, ThroughputTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoscalerConfig {
    /// EWMA smoothing factor for throughput.
    pub alpha: f64,
    /// Relative throughput drop after an add that counts as degradation.
    pub degradation: f64,
    /// Windows observed after an add before judging it.
    pub observation_windows: usize,
    /// Control intervals a stage sits out after a command.
    pub cooldown_intervals: u64,
    pub interval_secs: f64,
}

impl Default for AutoscalerConfig {
    fn default() -> Self {
        AutoscalerConfig {
            alpha: 0.5,
            degradation: 0.10,
            observation_windows: 3,
            cooldown_intervals: 3,
            interval_secs: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLimits {
    pub workers_initial: u32,
    pub workers_max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PendingAdd {
    from: u32,
    baseline: f64,
    windows_at_add: usize,
}

/// Scaling state carried between control intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    config: AutoscalerConfig,
    limits: BTreeMap<String, StageLimits>,
    interval: u64,
    workers: BTreeMap<String, u32>,
    cooldown_until: BTreeMap<String, u64>,
    pending: BTreeMap<String, PendingAdd>,
    /// Worker counts learned to degrade a stage; never exceeded again.
    ceiling: BTreeMap<String, u32>,
}

impl Policy {
    pub fn new(config: AutoscalerConfig, limits: BTreeMap<String, StageLimits>) -> Self {
        let workers = limits.iter().map(|(s, l)| (s.clone(), l.workers_initial)).collect();
        Policy {
            config,
            limits,
            interval: 0,
            workers,
            cooldown_until: BTreeMap::new(),
            pending: BTreeMap::new(),
            ceiling: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AutoscalerConfig {
        &self.config
    }

    pub fn interval(&self) -> u64 {
        self.interval
    }

    /// Worker count the policy last assigned to `stage`.
    pub fn workers(&self, stage: &str) -> Option<u32> {
        self.workers.get(stage).copied()
    }

    /// Starts the next control interval.
    pub fn advance(&mut self) {
        self.interval += 1;
    }

    fn in_cooldown(&self, stage: &str) -> bool {
        self.cooldown_until.get(stage).is_some_and(|&until| self.interval <= until)
    }

    fn cap(&self, stage: &str) -> u32 {
        let max = self.limits.get(stage).map_or(1, |l| l.workers_max);
        self.ceiling.get(stage).map_or(max, |&c| c.min(max))
    }

    fn current(&self, stage: &str, table: &ThroughputTable) -> u32 {
        self.workers
            .get(stage)
            .copied()
            .or_else(|| table.get(stage).map(|e| e.workers))
            .unwrap_or(1)
    }

    fn noop(&self, stage: &str, table: &ThroughputTable, reason: impl Into<String>) -> ScaleCommand {
        let target = self.current(stage, table).clamp(1, self.cap(stage).max(1));
        ScaleCommand { stage: stage.to_string(), action: ScaleAction::Noop, target_workers: target, reason: reason.into() }
    }

    /// Whether a judged add degraded throughput: `Some(true)` degraded,
    /// `Some(false)` confirmed, `None` still observing.
    fn verdict(&self, stage: &str, table: &ThroughputTable) -> Option<bool> {
        let p = self.pending.get(stage)?;
        let e = table.get(stage)?;
        if e.windows < p.windows_at_add + self.config.observation_windows {
            return None;
        }
        Some(e.throughput < p.baseline * (1.0 - self.config.degradation))
    }

    /// Chooses this interval's command. Does not change the policy state;
    /// [`Policy::commit`] applies a command once it has been dispatched.
    pub fn decide(&self, report: &BottleneckReport) -> ScaleCommand {
        let table = &report.table;
        for (stage, p) in &self.pending {
            if self.verdict(stage, table) == Some(true) {
                let now = table.get(stage).map_or(0.0, |e| e.throughput);
                return ScaleCommand {
                    stage: stage.clone(),
                    action: ScaleAction::RemoveWorker,
                    target_workers: p.from,
                    reason: format!(
                        "throughput fell from {:.0} to {:.0} B/s after adding a worker",
                        p.baseline, now
                    ),
                };
            }
        }

        let stage = report.stage.as_str();
        let Some(entry) = table.get(stage) else {
            return self.noop(stage, table, "bottleneck has no metrics");
        };
        if self.pending.contains_key(stage) && self.verdict(stage, table).is_none() {
            return self.noop(stage, table, "observing last add");
        }
        if self.in_cooldown(stage) {
            return self.noop(stage, table, "cooldown");
        }
        let current = self.current(stage, table);
        let cap = self.cap(stage);
        if current >= cap {
            return self.noop(stage, table, format!("bottleneck at worker cap {cap}"));
        }
        if entry.queue_depth == 0 {
            return self.noop(stage, table, "bottleneck has no backlog");
        }
        ScaleCommand {
            stage: stage.to_string(),
            action: ScaleAction::AddWorker,
            target_workers: current + 1,
            reason: format!("bottleneck at {:.0} B/s with {} queued", entry.throughput, entry.queue_depth),
        }
    }

    /// Records a dispatched command.
    pub fn commit(&mut self, command: &ScaleCommand, table: &ThroughputTable) {
        let confirmed: Vec<String> = self
            .pending
            .keys()
            .filter(|s| self.verdict(s, table) == Some(false))
            .cloned()
            .collect();
        for stage in confirmed {
            self.pending.remove(&stage);
        }
        let stage = &command.stage;
        match command.action {
            ScaleAction::Noop => return,
            ScaleAction::AddWorker => {
                let entry = table.get(stage);
                self.pending.insert(
                    stage.clone(),
                    PendingAdd {
                        from: self.current(stage, table),
                        baseline: entry.map_or(0.0, |e| e.throughput),
                        windows_at_add: entry.map_or(0, |e| e.windows),
                    },
                );
            }
            ScaleAction::RemoveWorker => {
                self.pending.remove(stage);
                self.ceiling.insert(stage.clone(), command.target_workers);
            }
        }
        self.workers.insert(stage.clone(), command.target_workers);
        self.cooldown_until.insert(stage.clone(), self.interval + self.config.cooldown_intervals);
    }
}
