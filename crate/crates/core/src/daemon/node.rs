use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::registry::StageRegistry;
use super::runtime::{QueuedTask, StageRuntime};
use super::{DaemonError, StageStatus};
use crate::autoscaler::LoggingService;
use crate::events::{self, EventLog, FlowStep};
use crate::spec::Channel;
use crate::storage::{
    DataItem, DeliveryReceipt, LocalStore, StorageError, StorageManager, StoreHandle, StoreInfo, StoreKind,
    TransferStream,
};
use crate::wire::transport::request;
use crate::wire::{Consumer, DataAvailable, DeployStage, MetricsReport, StageReady, SubscribeCatalog};

/// Queue bound for memory-channel handoffs.
pub const MEMORY_CHANNEL_CAPACITY: usize = 64;

/// How a daemon reaches the storage manager.
#[derive(Clone)]
pub enum ManagerLink {
    InProcess(Arc<StorageManager>),
    Remote(String),
}

/// Where a daemon sends its metric windows.
#[derive(Clone)]
pub enum MetricsSink {
    InProcess(Arc<LoggingService>),
    Remote(String),
}

#[derive(Clone)]
pub struct DaemonConfig {
    pub endpoint: String,
    pub root: PathBuf,
    pub storage_capacity: u64,
    pub registry: StageRegistry,
    pub events: Option<EventLog>,
    pub metrics_window: Duration,
}

impl DaemonConfig {
    pub fn new(endpoint: &str, root: &Path, storage_capacity: u64) -> Self {
        DaemonConfig {
            endpoint: endpoint.to_string(),
            root: root.to_path_buf(),
            storage_capacity,
            registry: StageRegistry::builtin(),
            events: None,
            metrics_window: Duration::from_secs(1),
        }
    }
}

/// Hosts the stages deployed on one endpoint, along with that endpoint's
/// local data store.
pub struct Daemon {
    endpoint: String,
    root: PathBuf,
    store: Arc<LocalStore>,
    registry: StageRegistry,
    events: Option<EventLog>,
    stages: RwLock<BTreeMap<String, Arc<StageRuntime>>>,
    routes: RwLock<BTreeMap<String, Vec<Consumer>>>,
    manager: RwLock<Option<ManagerLink>>,
    sink: RwLock<Option<MetricsSink>>,
    stop: Arc<AtomicBool>,
    reporter: Mutex<Option<JoinHandle<()>>>,
    me: Weak<Daemon>,
}

impl Daemon {
    pub fn start(config: DaemonConfig) -> Result<Arc<Daemon>, DaemonError> {
        let store = Arc::new(LocalStore::open(
            &config.endpoint,
            StoreKind::Local,
            &config.endpoint,
            config.root.join("store"),
            config.storage_capacity,
        )?);
        let daemon = Arc::new_cyclic(|me| Daemon {
            endpoint: config.endpoint.clone(),
            root: config.root.clone(),
            store,
            registry: config.registry.clone(),
            events: config.events.clone(),
            stages: RwLock::default(),
            routes: RwLock::default(),
            manager: RwLock::default(),
            sink: RwLock::default(),
            stop: Arc::new(AtomicBool::new(false)),
            reporter: Mutex::new(None),
            me: me.clone(),
        });
        let weak = Arc::downgrade(&daemon);
        let stop = daemon.stop.clone();
        let window = config.metrics_window;
        let handle = std::thread::Builder::new()
            .name(format!("{}-metrics", config.endpoint))
            .spawn(move || report_loop(weak, stop, window))
            .expect("spawn metrics reporter");
        *daemon.reporter.lock().expect("reporter") = Some(handle);
        Ok(daemon)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn store(&self) -> &Arc<LocalStore> {
        &self.store
    }

    pub fn set_manager(&self, link: ManagerLink) {
        *self.manager.write().expect("manager link") = Some(link);
    }

    pub fn set_metrics_sink(&self, sink: MetricsSink) {
        *self.sink.write().expect("metrics sink") = Some(sink);
    }

    pub fn stage(&self, name: &str) -> Option<Arc<StageRuntime>> {
        self.stages.read().expect("stages").get(name).cloned()
    }

    pub fn stage_names(&self) -> Vec<String> {
        self.stages.read().expect("stages").keys().cloned().collect()
    }

    /// Items `stage` has emitted on this endpoint, including after teardown.
    pub fn outputs(&self, stage: &str) -> Vec<DataItem> {
        super::runtime::read_outputs(&self.root.join("stages").join(stage))
    }

    /// Starts the stage, or updates its routing if already running.
    pub fn deploy(&self, req: DeployStage) -> Result<StageReady, DaemonError> {
        if req.endpoint != self.endpoint {
            return Err(DaemonError::WrongEndpoint { stage: req.stage.name, endpoint: req.endpoint });
        }
        if let Some(addr) = &req.storage_manager {
            let mut link = self.manager.write().expect("manager link");
            if !matches!(*link, Some(ManagerLink::InProcess(_))) {
                *link = Some(ManagerLink::Remote(addr.clone()));
            }
        }
        if let Some(addr) = &req.logging_service {
            let mut sink = self.sink.write().expect("metrics sink");
            if !matches!(*sink, Some(MetricsSink::InProcess(_))) {
                *sink = Some(MetricsSink::Remote(addr.clone()));
            }
        }
        let name = req.stage.name.clone();
        self.routes.write().expect("routes").insert(name.clone(), req.consumers);
        let mut stages = self.stages.write().expect("stages");
        if let Some(existing) = stages.get(&name) {
            return Ok(StageReady { stage: name, endpoint: self.endpoint.clone(), workers: existing.status().workers });
        }
        let invocation = self.registry.resolve(&req.stage).map_err(DaemonError::UnknownEntry)?;
        let runtime = StageRuntime::start(
            req.stage,
            &self.endpoint,
            req.workers_max,
            self.root.join("stages").join(&name),
            invocation,
            self.store.clone(),
            self.me.clone(),
            self.events.clone(),
        )?;
        let workers = runtime.status().workers;
        stages.insert(name.clone(), runtime);
        tracing::info!(stage = %name, endpoint = %self.endpoint, workers, "stage deployed");
        Ok(StageReady { stage: name, endpoint: self.endpoint.clone(), workers })
    }

    pub fn resize(&self, stage: &str, target: u32) -> Result<u32, DaemonError> {
        let rt = self.stage(stage).ok_or_else(|| DaemonError::UnknownStage(stage.to_string()))?;
        Ok(rt.resize(target))
    }

    pub fn status(&self, stages: &[String]) -> Vec<StageStatus> {
        self.stages
            .read()
            .expect("stages")
            .values()
            .filter(|rt| stages.is_empty() || stages.iter().any(|s| s == rt.name()))
            .map(|rt| rt.status())
            .collect()
    }

    /// Stops the named stages (all when empty) and forgets them.
    pub fn teardown(&self, stages: &[String], force: bool) -> Vec<String> {
        let victims: Vec<Arc<StageRuntime>> = {
            let mut map = self.stages.write().expect("stages");
            let names: Vec<String> =
                map.keys().filter(|n| stages.is_empty() || stages.contains(n)).cloned().collect();
            names.iter().filter_map(|n| map.remove(n)).collect()
        };
        let mut stopped = Vec::new();
        for rt in victims {
            rt.stop(force);
            self.routes.write().expect("routes").remove(rt.name());
            stopped.push(rt.name().to_string());
        }
        stopped
    }

    /// Stores bytes and queues them for a stage hosted here.
    pub fn ingest(&self, stage: &str, name: &str, bytes: &[u8]) -> Result<DataItem, DaemonError> {
        let rt = self.stage(stage).ok_or_else(|| DaemonError::UnknownStage(stage.to_string()))?;
        let item = self.store.push_named(bytes, "", Some(name), crate::storage::Layout::File)?;
        let item = DataItem { name: name.to_string(), ..item };
        rt.enqueue(QueuedTask { item: item.clone(), payload: None, enqueued: Instant::now() }, None)
            .map_err(DaemonError::Rejected)?;
        Ok(item)
    }

    /// Stores a transferred item and, when addressed to a local stage, queues it.
    pub fn accept_transfer(&self, stream: TransferStream) -> Result<DeliveryReceipt, StorageError> {
        let bytes = stream.assemble()?;
        let sent = &stream.done.item;
        let stored = self.store.push_named(&bytes, &sent.producer_stage, Some(&sent.name), sent.layout)?;
        let item = DataItem { name: sent.name.clone(), layout: sent.layout, ..stored };
        let consumer = stream.done.consumer_stage.clone();
        if let Some(stage) = &consumer {
            events::record(&self.events, FlowStep::Transfer, &item.id, stage, self.store.id());
            let rt = self.stage(stage).ok_or_else(|| StorageError::TransferFailed(format!("no stage `{stage}` here")))?;
            rt.enqueue(QueuedTask { item: item.clone(), payload: None, enqueued: Instant::now() }, None)
                .map_err(StorageError::TransferFailed)?;
        }
        Ok(DeliveryReceipt {
            item_id: item.id,
            target_store: self.store.id().to_string(),
            bytes: bytes.len() as u64,
            chunks: stream.done.chunks,
            consumer_stage: consumer,
        })
    }

    /// Hands a producer's output to each of its consumers.
    pub(crate) fn forward(&self, producer: &str, item: &DataItem, bytes: Vec<u8>) -> Result<(), String> {
        let consumers = self.routes.read().expect("routes").get(producer).cloned().unwrap_or_default();
        if consumers.is_empty() {
            return Ok(());
        }
        let payload = Arc::new(bytes);
        let mut network = Vec::new();
        for consumer in consumers {
            let same_endpoint = consumer.endpoint == self.endpoint;
            match consumer.channel {
                Channel::Network if !same_endpoint => network.push(consumer),
                channel => {
                    if channel == Channel::Network {
                        // Catalog the item, but the bytes are already here.
                        self.publish_local(item)?;
                    }
                    let rt = self
                        .stage(&consumer.stage)
                        .ok_or_else(|| format!("consumer `{}` is not deployed here", consumer.stage))?;
                    let (memory, bound) = match channel {
                        Channel::Memory => (Some(payload.clone()), Some(MEMORY_CHANNEL_CAPACITY)),
                        _ => (None, None),
                    };
                    rt.enqueue(QueuedTask { item: item.clone(), payload: memory, enqueued: Instant::now() }, bound)?;
                }
            }
        }
        if network.is_empty() {
            return Ok(());
        }
        let link = self.manager.read().expect("manager link").clone();
        match link {
            None => Err(format!("stage `{producer}` has network consumers but no storage manager")),
            Some(ManagerLink::InProcess(manager)) => {
                manager.publish_catalog(item, self.store.id()).map_err(|e| e.to_string())?;
                for c in network {
                    manager.deliver(&item.id, self.store.id(), &c.endpoint, Some(&c.stage)).map_err(|e| e.to_string())?;
                }
                Ok(())
            }
            Some(ManagerLink::Remote(addr)) => {
                let note = DataAvailable { item: item.clone(), source_store: self.store.id().to_string(), consumers: network };
                request(&addr, note).map(|_| ()).map_err(|e| e.to_string())
            }
        }
    }

    fn publish_local(&self, item: &DataItem) -> Result<(), String> {
        let link = self.manager.read().expect("manager link").clone();
        match link {
            Some(ManagerLink::InProcess(m)) => m.publish_catalog(item, self.store.id()).map(|_| ()).map_err(|e| e.to_string()),
            Some(ManagerLink::Remote(addr)) => {
                let note = DataAvailable { item: item.clone(), source_store: self.store.id().to_string(), consumers: vec![] };
                request(&addr, note).map(|_| ()).map_err(|e| e.to_string())
            }
            None => Ok(()),
        }
    }

    /// Called when the storage manager announces an item for a stage here:
    /// subscribe this endpoint's store, which pulls the bytes in.
    pub fn on_data_available(&self, note: &DataAvailable) -> Result<(), StorageError> {
        let link = self.manager.read().expect("manager link").clone();
        for consumer in note.consumers.iter().filter(|c| c.endpoint == self.endpoint) {
            match &link {
                Some(ManagerLink::InProcess(m)) => {
                    m.deliver(&note.item.id, &note.source_store, self.store.id(), Some(&consumer.stage))?;
                }
                Some(ManagerLink::Remote(addr)) => {
                    let sub = SubscribeCatalog {
                        item_id: note.item.id.clone(),
                        source_store: note.source_store.clone(),
                        target_store: self.store.id().to_string(),
                        consumer_stage: Some(consumer.stage.clone()),
                    };
                    request(addr, sub)?;
                }
                None => return Err(StorageError::TransferFailed("no storage manager configured".into())),
            }
        }
        Ok(())
    }

    fn report_metrics(&self) {
        let sink = self.sink.read().expect("metrics sink").clone();
        let Some(sink) = sink else { return };
        let stages: Vec<_> = self.stages.read().expect("stages").values().cloned().collect();
        if stages.is_empty() {
            return;
        }
        let report = MetricsReport { endpoint: self.endpoint.clone(), metrics: stages.iter().map(|s| s.take_window()).collect() };
        match sink {
            MetricsSink::InProcess(logging) => logging.ingest(&report),
            MetricsSink::Remote(addr) => {
                if let Err(e) = request(&addr, report) {
                    tracing::debug!(error = %e, "metrics report dropped");
                }
            }
        }
    }

    /// Stops every stage and the metrics reporter.
    pub fn shutdown(&self) {
        self.teardown(&[], true);
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.reporter.lock().expect("reporter").take() {
            if h.thread().id() != std::thread::current().id() {
                let _ = h.join();
            }
        }
    }
}

fn report_loop(daemon: Weak<Daemon>, stop: Arc<AtomicBool>, window: Duration) {
    let mut next = Instant::now() + window;
    while !stop.load(Ordering::Relaxed) {
        let now = Instant::now();
        if now < next {
            std::thread::sleep((next - now).min(Duration::from_millis(50)));
            continue;
        }
        next += window;
        match daemon.upgrade() {
            Some(d) => d.report_metrics(),
            None => return,
        }
    }
}

/// Store handle the in-process storage manager uses to reach a daemon.
pub struct DaemonStoreHandle(pub Arc<Daemon>);

impl StoreHandle for DaemonStoreHandle {
    fn store_id(&self) -> &str {
        self.0.store.id()
    }

    fn kind(&self) -> StoreKind {
        StoreKind::Local
    }

    fn info(&self) -> Result<StoreInfo, StorageError> {
        Ok(self.0.store.info())
    }

    fn contains(&self, item_id: &str) -> Result<bool, StorageError> {
        Ok(self.0.store.contains(item_id))
    }

    fn fetch(&self, item_id: &str, chunk_size: usize) -> Result<TransferStream, StorageError> {
        let item = self.0.store.get(item_id).ok_or_else(|| StorageError::NotFound(item_id.to_string()))?;
        Ok(TransferStream::from_bytes(item, &self.0.store.pull(item_id)?, chunk_size, None))
    }

    fn receive(&self, stream: TransferStream) -> Result<DeliveryReceipt, StorageError> {
        self.0.accept_transfer(stream)
    }
}
