//! Runs a whole system inside one process: one in-process daemon per
//! endpoint, an in-process storage manager and logging service, and the
//! autoscaler control loop. Used by `run-local` and `bench`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autoscaler::{
    AutoscalerConfig, ControlLoop, ControlLoopHandle, DecisionRecord, LoggingService, Policy, StageMetrics,
};
use crate::controller::{
    Controller, ControllerError, EndpointClient, LocalEndpoint, ManagerAccess, ResultsSummary, SystemHandle,
};
use crate::daemon::{Daemon, DaemonConfig, DaemonStoreHandle, ManagerLink, MetricsSink, StageRegistry, StageStatus};
use crate::events::EventLog;
use crate::spec::{SystemSpec, WorkersMax};
use crate::storage::server::ManagerService;
use crate::storage::StorageManager;

pub const AUDIT_LOG: &str = "autoscaler.log";
pub const RUN_REPORT: &str = "run_report.json";

#[derive(Clone)]
pub struct LocalOptions {
    /// Daemon roots, the global stores and the audit log go here.
    pub root: PathBuf,
    pub workers: WorkerOverrides,
    pub autoscale: bool,
    pub autoscaler: AutoscalerConfig,
    pub metrics_window: Duration,
    pub timeout: Duration,
    pub poll: Duration,
    pub registry: StageRegistry,
}

impl LocalOptions {
    pub fn new(root: &Path) -> Self {
        LocalOptions {
            root: root.to_path_buf(),
            workers: WorkerOverrides::default(),
            autoscale: true,
            autoscaler: AutoscalerConfig::default(),
            metrics_window: Duration::from_secs(1),
            timeout: Duration::from_secs(600),
            poll: Duration::from_millis(50),
            registry: StageRegistry::builtin(),
        }
    }
}

/// Fixed worker counts that replace a spec's `workers_initial` and
/// `workers_max`, for all stages and/or by stage name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkerOverrides {
    pub all: Option<u32>,
    pub stages: BTreeMap<String, u32>,
}

impl WorkerOverrides {
    /// Parses `N` (every stage) and `stage=N` arguments.
    pub fn parse<S: AsRef<str>>(args: &[S]) -> Result<Self, String> {
        let mut out = WorkerOverrides::default();
        for arg in args {
            let arg = arg.as_ref();
            let count = |v: &str| match v.trim().parse::<u32>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(format!("bad worker count in `{arg}`")),
            };
            match arg.split_once('=') {
                Some((stage, n)) => {
                    out.stages.insert(stage.trim().to_string(), count(n)?);
                }
                None => out.all = Some(count(arg)?),
            }
        }
        Ok(out)
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_none() && self.stages.is_empty()
    }

    pub fn apply(&self, spec: &SystemSpec) -> Result<SystemSpec, String> {
        if let Some(unknown) = self.stages.keys().find(|k| spec.stage(k).is_none()) {
            return Err(format!("worker override names unknown stage `{unknown}`"));
        }
        let mut spec = spec.clone();
        for s in &mut spec.stages {
            if let Some(n) = self.stages.get(&s.name).copied().or(self.all) {
                s.workers_initial = n;
                s.workers_max = WorkersMax::Fixed(n);
            }
        }
        Ok(spec)
    }
}

/// In-process daemons and services for one spec's endpoints.
pub struct LocalCluster {
    pub daemons: BTreeMap<String, Arc<Daemon>>,
    pub service: Arc<ManagerService>,
    pub logging: Arc<LoggingService>,
    pub events: EventLog,
    pub controller: Controller,
}

impl LocalCluster {
    pub fn start(spec: &SystemSpec, opts: &LocalOptions) -> Result<LocalCluster, ControllerError> {
        let events = EventLog::new();
        let manager = Arc::new(StorageManager::in_memory().with_events(events.clone()));
        let service = Arc::new(ManagerService::new(manager.clone(), opts.root.join("global")));
        let logging = Arc::new(LoggingService::new());
        let mut daemons = BTreeMap::new();
        let mut clients: Vec<Arc<dyn EndpointClient>> = Vec::new();
        for e in &spec.endpoints {
            let mut config = DaemonConfig::new(&e.name, &opts.root.join("endpoints").join(&e.name), e.storage_capacity);
            config.registry = opts.registry.clone();
            config.events = Some(events.clone());
            config.metrics_window = opts.metrics_window;
            let daemon = Daemon::start(config).map_err(|err| ControllerError::EndpointUnreachable {
                endpoint: e.name.clone(),
                detail: err.to_string(),
            })?;
            daemon.set_manager(ManagerLink::InProcess(manager.clone()));
            daemon.set_metrics_sink(MetricsSink::InProcess(logging.clone()));
            manager.register(Arc::new(DaemonStoreHandle(daemon.clone())));
            clients.push(Arc::new(LocalEndpoint(daemon.clone())));
            daemons.insert(e.name.clone(), daemon);
        }
        let controller = Controller::new(clients, ManagerAccess::InProcess(service.clone()));
        Ok(LocalCluster { daemons, service, logging, events, controller })
    }

    pub fn manager(&self) -> &Arc<StorageManager> {
        self.service.manager()
    }

    /// Starts the control loop for a deployed system.
    pub fn autoscale(
        &self,
        handle: &Arc<SystemHandle>,
        config: AutoscalerConfig,
        audit_log: Option<&Path>,
    ) -> Result<(Arc<ControlLoop>, ControlLoopHandle), ControllerError> {
        let interval = Duration::from_secs_f64(config.interval_secs);
        let policy = Policy::new(config, handle.limits());
        let mut cl = ControlLoop::new(self.logging.clone(), policy, handle.clone());
        if let Some(path) = audit_log {
            cl = cl.with_audit_log(path)?;
        }
        let cl = Arc::new(cl);
        let running = cl.clone().spawn(interval);
        Ok((cl, running))
    }

    pub fn shutdown(&self) {
        for d in self.daemons.values() {
            d.shutdown();
        }
    }
}

impl Drop for LocalCluster {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub system: String,
    pub seconds: f64,
    pub items_ingested: usize,
    pub stages: Vec<StageStatus>,
    pub decisions: Vec<DecisionRecord>,
    pub metrics: BTreeMap<String, Vec<StageMetrics>>,
    pub results: ResultsSummary,
}

/// Deploys `spec` in-process, ingests every file of `input`, waits for
/// quiescence, writes results and the run report under `out`, and tears
/// the system down.
pub fn run_local(spec: &SystemSpec, input: &Path, out: &Path, opts: &LocalOptions) -> Result<RunReport, ControllerError> {
    let spec = opts.workers.apply(spec).map_err(ControllerError::Runtime)?;
    let cluster = LocalCluster::start(&spec, opts)?;
    let handle = cluster.controller.deploy_system(&spec)?;
    let control = if opts.autoscale {
        Some(cluster.autoscale(&handle, opts.autoscaler.clone(), Some(&out.join(AUDIT_LOG)))?)
    } else {
        None
    };

    let started = Instant::now();
    let ingested = handle.ingest_dir(input)?;
    let waited = handle.wait_quiescent(opts.timeout, opts.poll);
    let seconds = started.elapsed().as_secs_f64();
    let decisions = match control {
        Some((cl, running)) => {
            running.stop();
            cl.records()
        }
        None => Vec::new(),
    };
    let status = waited?;
    handle.promote_results()?;
    let results = handle.write_results(out)?;
    handle.teardown(false)?;

    let report = RunReport {
        system: spec.name.clone(),
        seconds,
        items_ingested: ingested,
        stages: status.stages,
        decisions,
        metrics: cluster.logging.history(),
        results,
    };
    fs::create_dir_all(out)?;
    fs::write(out.join(RUN_REPORT), serde_json::to_vec_pretty(&report).expect("report serializes"))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub workers: u32,
    pub items: usize,
    pub seconds: f64,
}

/// Runs the system once per sweep entry, with `stage` (or every stage when
/// `None`) pinned to that worker count and autoscaling off. An empty input
/// yields zero-time rows without deploying.
pub fn bench(
    spec: &SystemSpec,
    input: &Path,
    stage: Option<&str>,
    sweep: &[u32],
    opts: &LocalOptions,
) -> Result<Vec<BenchRow>, ControllerError> {
    let empty = fs::read_dir(input)?.filter_map(Result::ok).all(|e| !e.path().is_file());
    let mut rows = Vec::new();
    for (i, &w) in sweep.iter().enumerate() {
        if empty {
            rows.push(BenchRow { workers: w, items: 0, seconds: 0.0 });
            continue;
        }
        let run_root = opts.root.join(format!("run{i}-w{w}"));
        let mut o = opts.clone();
        o.root = run_root.join("cluster");
        o.autoscale = false;
        o.workers = opts.workers.clone();
        match stage {
            Some(s) => {
                o.workers.stages.insert(s.to_string(), w);
            }
            None => o.workers.all = Some(w),
        }
        let report = run_local(spec, input, &run_root.join("out"), &o)?;
        tracing::info!(workers = w, seconds = report.seconds, "bench run");
        rows.push(BenchRow { workers: w, items: report.items_ingested, seconds: report.seconds });
    }
    Ok(rows)
}
