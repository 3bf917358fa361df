//! Deploys a system's stages onto endpoint daemons, wires their channels,
//! feeds source stages, and reports, collects and tears down.

mod client;
mod state;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{EndpointClient, LocalEndpoint, RemoteEndpoint};
pub use state::{SystemRecord, SYSTEMS_DIR};

use crate::autoscaler::{Dispatch, ScaleCommand, StageLimits};
use crate::daemon::{StageState, StageStatus};
use crate::eos::{self, TrendRecord, WaterSummary};
use crate::spec::{plan, DeploymentPlan, PlanError, Role, SpecError, SystemSpec, Violation};
use crate::storage::server::ManagerService;
use crate::storage::{DataItem, StoreKind};
use crate::wire::transport::request;
use crate::wire::{Body, Consumer, DeployStage, FetchItem, ListItems, Promote, RegisterStore};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid spec: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidSpec(Vec<Violation>),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("endpoint `{endpoint}` is unreachable: {detail}")]
    EndpointUnreachable { endpoint: String, detail: String },
    #[error("deployment of `{failed}` failed ({detail}); rolled back {rolled_back:?}")]
    PartialDeployment { rolled_back: Vec<String>, failed: String, detail: String },
    #[error("stage `{stage}`: {detail}")]
    StageFailed { stage: String, detail: String },
    #[error("system `{0}` is not running")]
    SystemNotRunning(String),
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("{0}")]
    Runtime(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

impl ControllerError {
    /// Process exit code: 1 validation, 2 deployment, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            ControllerError::InvalidSpec(_) | ControllerError::Spec(_) => 1,
            ControllerError::EndpointUnreachable { .. } | ControllerError::PartialDeployment { .. } => 2,
            _ => 3,
        }
    }
}

impl From<PlanError> for ControllerError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::InvalidSpec(v) => ControllerError::InvalidSpec(v),
        }
    }
}

/// How the controller reaches the storage manager.
#[derive(Clone)]
pub enum ManagerAccess {
    None,
    InProcess(Arc<ManagerService>),
    Remote(String),
}

impl ManagerAccess {
    fn address(&self) -> Option<String> {
        match self {
            ManagerAccess::Remote(a) => Some(a.clone()),
            _ => None,
        }
    }
}

/// Id of the global store hosted for a `global-store` endpoint.
pub fn global_store_id(endpoint: &str) -> String {
    format!("{endpoint}.global")
}

pub struct Controller {
    clients: BTreeMap<String, Arc<dyn EndpointClient>>,
    manager: ManagerAccess,
    logging_address: Option<String>,
    systems: Mutex<BTreeMap<String, Arc<SystemHandle>>>,
}

impl Controller {
    pub fn new(clients: Vec<Arc<dyn EndpointClient>>, manager: ManagerAccess) -> Self {
        Controller {
            clients: clients.into_iter().map(|c| (c.endpoint().to_string(), c)).collect(),
            manager,
            logging_address: None,
            systems: Mutex::default(),
        }
    }

    /// A controller for daemons at the addresses the spec declares.
    pub fn remote(spec: &SystemSpec) -> Self {
        let clients: Vec<Arc<dyn EndpointClient>> = spec
            .endpoints
            .iter()
            .map(|e| Arc::new(RemoteEndpoint::new(&e.name, &e.address)) as Arc<dyn EndpointClient>)
            .collect();
        let manager = spec.storage_manager.clone().map_or(ManagerAccess::None, ManagerAccess::Remote);
        Controller::new(clients, manager)
    }

    /// Daemons send metric windows to this logging service address.
    pub fn with_logging_address(mut self, address: Option<String>) -> Self {
        self.logging_address = address;
        self
    }

    pub fn system(&self, name: &str) -> Option<Arc<SystemHandle>> {
        self.systems.lock().expect("systems").get(name).cloned()
    }

    /// Handle for a system deployed by an earlier controller process.
    pub fn attach(&self, spec: &SystemSpec, running: bool) -> Result<Arc<SystemHandle>, ControllerError> {
        let plan = plan(spec)?;
        let handle = Arc::new(self.handle_for(spec.clone(), plan)?);
        handle.running.store(running, Ordering::SeqCst);
        self.systems.lock().expect("systems").insert(spec.name.clone(), handle.clone());
        Ok(handle)
    }

    fn handle_for(&self, spec: SystemSpec, plan: DeploymentPlan) -> Result<SystemHandle, ControllerError> {
        let mut clients = BTreeMap::new();
        for g in &plan.groups {
            let c = self.clients.get(&g.endpoint).ok_or_else(|| ControllerError::EndpointUnreachable {
                endpoint: g.endpoint.clone(),
                detail: "no daemon registered for this endpoint".into(),
            })?;
            clients.insert(g.endpoint.clone(), c.clone());
        }
        Ok(SystemHandle { spec, plan, clients, manager: self.manager.clone(), running: AtomicBool::new(false) })
    }

    /// Deploys every stage, consumers before producers. Either the whole
    /// plan ends up deployed or nothing does. Redeploying an identical,
    /// running system returns the existing handle.
    pub fn deploy_system(&self, spec: &SystemSpec) -> Result<Arc<SystemHandle>, ControllerError> {
        let plan = plan(spec)?;
        if let Some(existing) = self.system(&spec.name) {
            if existing.plan == plan && existing.is_running() {
                return Ok(existing);
            }
            existing.teardown(false)?;
        }
        let handle = self.handle_for(spec.clone(), plan)?;
        for client in handle.clients.values() {
            client.ping()?;
        }
        self.register_stores(spec, &handle)?;

        let mut deployed: Vec<String> = Vec::new();
        for stage in handle.plan.order.iter().rev() {
            let (group, planned) = handle.plan.stage(stage).expect("planned stage");
            let consumers = handle
                .plan
                .downstream(stage)
                .map(|b| Consumer {
                    stage: b.to_stage.clone(),
                    endpoint: b.to_endpoint.clone(),
                    address: handle.clients[&b.to_endpoint].address(),
                    channel: b.channel,
                })
                .collect();
            let req = DeployStage {
                system: spec.name.clone(),
                endpoint: group.endpoint.clone(),
                stage: planned.spec.clone(),
                workers_max: planned.workers_max,
                consumers,
                storage_manager: self.manager.address(),
                logging_service: self.logging_address.clone(),
            };
            match handle.clients[&group.endpoint].deploy(req) {
                Ok(ready) => {
                    tracing::debug!(stage = %ready.stage, workers = ready.workers, "stage ready");
                    deployed.push(stage.clone());
                }
                Err(e) => {
                    for name in deployed.iter().rev() {
                        let (g, _) = handle.plan.stage(name).expect("planned stage");
                        if let Err(te) = handle.clients[&g.endpoint].teardown(std::slice::from_ref(name), true) {
                            tracing::warn!(stage = %name, error = %te, "rollback teardown failed");
                        }
                    }
                    return Err(match e {
                        unreachable @ ControllerError::EndpointUnreachable { .. } if deployed.is_empty() => unreachable,
                        other => ControllerError::PartialDeployment {
                            rolled_back: deployed,
                            failed: stage.clone(),
                            detail: other.to_string(),
                        },
                    });
                }
            }
        }
        handle.running.store(true, Ordering::SeqCst);
        let handle = Arc::new(handle);
        self.systems.lock().expect("systems").insert(spec.name.clone(), handle.clone());
        tracing::info!(system = %spec.name, stages = deployed.len(), "system deployed");
        Ok(handle)
    }

    fn register_stores(&self, spec: &SystemSpec, handle: &SystemHandle) -> Result<(), ControllerError> {
        let globals = spec.endpoints.iter().filter(|e| e.roles.contains(&Role::GlobalStore));
        match &self.manager {
            ManagerAccess::None => Ok(()),
            ManagerAccess::InProcess(service) => {
                for e in globals {
                    service
                        .add_global_store(&global_store_id(&e.name), e.storage_capacity)
                        .map_err(|err| ControllerError::Runtime(err.to_string()))?;
                }
                Ok(())
            }
            ManagerAccess::Remote(addr) => {
                let unreachable = |e: crate::wire::WireError| ControllerError::EndpointUnreachable {
                    endpoint: "storage-manager".into(),
                    detail: e.to_string(),
                };
                for g in &handle.plan.groups {
                    let reg = RegisterStore {
                        store_id: g.endpoint.clone(),
                        kind: StoreKind::Local,
                        address: Some(handle.clients[&g.endpoint].address()),
                        capacity_bytes: g.storage_capacity,
                    };
                    request(addr, reg).map_err(unreachable)?;
                }
                for e in globals {
                    let reg = RegisterStore {
                        store_id: global_store_id(&e.name),
                        kind: StoreKind::Global,
                        address: None,
                        capacity_bytes: e.storage_capacity,
                    };
                    request(addr, reg).map_err(unreachable)?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemStatus {
    pub system: String,
    pub running: bool,
    /// In topological order.
    pub stages: Vec<StageStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsSummary {
    pub items: Vec<String>,
    pub summaries: Vec<WaterSummary>,
    pub trends: Vec<TrendRecord>,
}

pub struct SystemHandle {
    spec: SystemSpec,
    plan: DeploymentPlan,
    clients: BTreeMap<String, Arc<dyn EndpointClient>>,
    manager: ManagerAccess,
    running: AtomicBool,
}

impl SystemHandle {
    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn plan(&self) -> &DeploymentPlan {
        &self.plan
    }

    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }

    fn client_for(&self, stage: &str) -> Result<&Arc<dyn EndpointClient>, ControllerError> {
        let (g, _) = self.plan.stage(stage).ok_or_else(|| ControllerError::Runtime(format!("unknown stage `{stage}`")))?;
        Ok(&self.clients[&g.endpoint])
    }

    /// Autoscaler bounds for every stage.
    pub fn limits(&self) -> BTreeMap<String, StageLimits> {
        self.plan
            .groups
            .iter()
            .flat_map(|g| g.stages.iter())
            .map(|s| {
                let max = s.workers_max.max(1);
                (
                    s.spec.name.clone(),
                    StageLimits { workers_initial: s.spec.workers_initial.clamp(1, max), workers_max: max },
                )
            })
            .collect()
    }

    /// Feeds each item to every source stage. Returns the number accepted.
    pub fn ingest(&self, items: &[(String, Vec<u8>)]) -> Result<usize, ControllerError> {
        if !self.is_running() {
            return Err(ControllerError::SystemNotRunning(self.spec.name.clone()));
        }
        let sources: Vec<String> = self.plan.sources().into_iter().map(str::to_string).collect();
        for (name, bytes) in items {
            for stage in &sources {
                self.client_for(stage)?.ingest(stage, name, bytes)?;
            }
        }
        Ok(items.len())
    }

    /// Ingests every regular file directly inside `dir`, in name order.
    pub fn ingest_dir(&self, dir: &Path) -> Result<usize, ControllerError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let items = paths
            .iter()
            .map(|p| Ok((p.file_name().expect("file has a name").to_string_lossy().into_owned(), fs::read(p)?)))
            .collect::<Result<Vec<_>, std::io::Error>>()?;
        self.ingest(&items)
    }

    pub fn status(&self) -> Result<SystemStatus, ControllerError> {
        let running = self.is_running();
        let mut stages = Vec::new();
        for name in &self.plan.order {
            let (g, planned) = self.plan.stage(name).expect("planned stage");
            let found = if running {
                self.clients[&g.endpoint].status(std::slice::from_ref(name))?.into_iter().next()
            } else {
                None
            };
            stages.push(found.unwrap_or(StageStatus {
                stage: name.clone(),
                endpoint: g.endpoint.clone(),
                state: StageState::Stopped,
                workers: 0,
                live_workers: 0,
                workers_max: planned.workers_max,
                busy: 0,
                queue_depth: 0,
                completed: 0,
                failed: 0,
                bytes_processed: 0,
            }));
        }
        Ok(SystemStatus { system: self.spec.name.clone(), running, stages })
    }

    /// Blocks until no stage has queued or running work, confirmed by two
    /// consecutive identical snapshots taken in topological order.
    pub fn wait_quiescent(&self, timeout: Duration, poll: Duration) -> Result<SystemStatus, ControllerError> {
        let deadline = Instant::now() + timeout;
        let mut last: Option<Vec<(u64, u64)>> = None;
        loop {
            let status = self.status()?;
            let idle = status.stages.iter().all(|s| s.is_idle());
            let counts: Vec<_> = status.stages.iter().map(|s| (s.completed, s.failed)).collect();
            if idle && last.as_ref() == Some(&counts) {
                return Ok(status);
            }
            last = idle.then_some(counts);
            if Instant::now() >= deadline {
                return Err(ControllerError::Timeout(format!("system `{}` still busy", self.spec.name)));
            }
            std::thread::sleep(poll);
        }
    }

    /// Drains (or, when forced, drops) queued work and stops every stage.
    /// Stored data is kept. Idempotent.
    pub fn teardown(&self, force: bool) -> Result<(), ControllerError> {
        for name in &self.plan.order {
            let (g, _) = self.plan.stage(name).expect("planned stage");
            match self.clients[&g.endpoint].teardown(std::slice::from_ref(name), force) {
                Ok(_) => {}
                Err(ControllerError::EndpointUnreachable { endpoint, detail }) => {
                    tracing::warn!(%endpoint, %detail, "endpoint gone during teardown");
                }
                Err(e) => return Err(e),
            }
        }
        self.running.store(false, Ordering::SeqCst);
        Ok(())
    }

    /// Outputs of the sink stages, from their endpoint stores or, when those
    /// are unreachable, from the global catalog.
    pub fn sink_outputs(&self) -> Result<Vec<(DataItem, Vec<u8>)>, ControllerError> {
        let mut out = Vec::new();
        for sink in self.plan.sinks() {
            let client = self.client_for(sink)?;
            match client.list_items(sink) {
                Ok(items) => {
                    for item in items {
                        let bytes = client.fetch(&item.id)?;
                        out.push((item, bytes));
                    }
                }
                Err(ControllerError::EndpointUnreachable { .. }) => out.extend(self.global_outputs(sink)?),
                Err(e) => return Err(e),
            }
        }
        out.sort_by(|a, b| a.0.name.cmp(&b.0.name).then_with(|| a.0.id.cmp(&b.0.id)));
        Ok(out)
    }

    fn global_outputs(&self, stage: &str) -> Result<Vec<(DataItem, Vec<u8>)>, ControllerError> {
        let rt = |e: &dyn std::fmt::Display| ControllerError::Runtime(e.to_string());
        match &self.manager {
            ManagerAccess::None => Err(ControllerError::Runtime(format!("no store reachable for `{stage}` outputs"))),
            ManagerAccess::InProcess(service) => {
                let m = service.manager();
                m.global_catalog()
                    .into_iter()
                    .filter(|e| e.item.producer_stage == stage)
                    .map(|e| Ok((e.item.clone(), m.pull(&e.source_store, &e.item.id).map_err(|x| rt(&x))?)))
                    .collect()
            }
            ManagerAccess::Remote(addr) => {
                let list = ListItems { store_id: None, producer_stage: Some(stage.to_string()), item_id: None };
                let (replies, _) = request(addr, list).map_err(|e| rt(&e))?;
                let items: Vec<DataItem> = replies
                    .into_iter()
                    .filter_map(|b| match b {
                        Body::ItemList(l) => Some(l.items),
                        _ => None,
                    })
                    .flatten()
                    .collect();
                items
                    .into_iter()
                    .map(|item| {
                        let fetch = FetchItem { item_id: item.id.clone(), store_id: None, chunk_size: 0 };
                        let (replies, _) = request(addr, fetch).map_err(|e| rt(&e))?;
                        let bytes = crate::storage::TransferStream::from_messages(replies)
                            .and_then(|s| s.assemble())
                            .map_err(|e| rt(&e))?;
                        Ok((item, bytes))
                    })
                    .collect()
            }
        }
    }

    /// Copies sink outputs onto the least utilized global store. Returns
    /// the number promoted; 0 when the system has no global store.
    pub fn promote_results(&self) -> Result<usize, ControllerError> {
        if !self.spec.endpoints.iter().any(|e| e.roles.contains(&Role::GlobalStore)) {
            return Ok(0);
        }
        let mut n = 0;
        for sink in self.plan.sinks() {
            for item in self.client_for(sink)?.list_items(sink)? {
                match &self.manager {
                    ManagerAccess::None => return Ok(0),
                    ManagerAccess::InProcess(service) => {
                        service.manager().promote_to_global(&item.id).map_err(|e| ControllerError::Runtime(e.to_string()))?;
                    }
                    ManagerAccess::Remote(addr) => {
                        request(addr, Promote { item_id: item.id.clone() })
                            .map_err(|e| ControllerError::Runtime(e.to_string()))?;
                    }
                }
                n += 1;
            }
        }
        Ok(n)
    }

    /// Writes sink outputs under `out/items/`, and for water summaries also
    /// `out/summaries.jsonl` (sorted by date) and `out/trends.json`.
    pub fn write_results(&self, out: &Path) -> Result<ResultsSummary, ControllerError> {
        write_results(&self.sink_outputs()?, out)
    }
}

pub fn write_results(outputs: &[(DataItem, Vec<u8>)], out: &Path) -> Result<ResultsSummary, ControllerError> {
    let items_dir = out.join("items");
    fs::create_dir_all(&items_dir)?;
    let mut names = Vec::new();
    let mut text = String::new();
    let mut all_summaries = true;
    for (item, bytes) in outputs {
        let name = if item.name.is_empty() { item.id.clone() } else { item.name.clone() };
        fs::write(items_dir.join(&name), bytes)?;
        names.push(name);
        match std::str::from_utf8(bytes) {
            Ok(t) if eos::parse_summaries(t).is_ok() => text.push_str(t),
            _ => all_summaries = false,
        }
    }
    let (summaries, trends) = if all_summaries && !outputs.is_empty() {
        let summaries = eos::parse_summaries(&text).expect("checked above");
        let trends = eos::trends(&summaries);
        let mut lines = String::new();
        for s in &summaries {
            lines.push_str(&serde_json::to_string(s).expect("summary serializes"));
            lines.push('\n');
        }
        fs::write(out.join("summaries.jsonl"), lines)?;
        fs::write(out.join("trends.json"), serde_json::to_string_pretty(&trends).expect("trends serialize"))?;
        (summaries, trends)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(ResultsSummary { items: names, summaries, trends })
}

impl Dispatch for SystemHandle {
    fn dispatch(&self, command: &ScaleCommand) -> Result<(), String> {
        let client = self.client_for(&command.stage).map_err(|e| e.to_string())?;
        client.scale(command).map(|_| ()).map_err(|e| e.to_string())
    }
}
