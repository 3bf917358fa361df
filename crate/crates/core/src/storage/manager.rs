use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{content_id, DataItem, LocalStore, StorageError, StoreInfo, StoreKind};
use crate::events::{self, EventLog, FlowStep};
use crate::wire::{Body, TransferChunk, TransferDone, DEFAULT_CHUNK_SIZE};

const CATALOG_LOG: &str = "catalog.log";
const TRANSFER_ATTEMPTS: usize = 3;

/// A store as seen by the storage manager: local to this process or reached
/// over the wire.
pub trait StoreHandle: Send + Sync {
    fn store_id(&self) -> &str;
    fn kind(&self) -> StoreKind;
    fn info(&self) -> Result<StoreInfo, StorageError>;
    fn contains(&self, item_id: &str) -> Result<bool, StorageError>;
    /// Reads an item out as a chunked transfer.
    fn fetch(&self, item_id: &str, chunk_size: usize) -> Result<TransferStream, StorageError>;
    /// Verifies and stores an incoming transfer. When the stream names a
    /// consumer stage, the owner also hands the data to that stage.
    fn receive(&self, stream: TransferStream) -> Result<DeliveryReceipt, StorageError>;
}

/// The messages of one item transfer: `TransferChunk`s in order, then `TransferDone`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferStream {
    pub chunks: Vec<TransferChunk>,
    pub done: TransferDone,
}

impl TransferStream {
    pub fn from_bytes(item: DataItem, bytes: &[u8], chunk_size: usize, consumer_stage: Option<String>) -> Self {
        let chunk_size = chunk_size.max(1);
        let chunks: Vec<TransferChunk> = bytes
            .chunks(chunk_size)
            .enumerate()
            .map(|(seq, data)| TransferChunk { item_id: item.id.clone(), seq: seq as u32, data: data.to_vec() })
            .collect();
        let done = TransferDone { checksum: content_id(bytes), chunks: chunks.len() as u32, item, consumer_stage };
        TransferStream { chunks, done }
    }

    /// Reassembles the payload, checking order, count and digest.
    pub fn assemble(&self) -> Result<Vec<u8>, StorageError> {
        let item = &self.done.item.id;
        if self.chunks.len() as u32 != self.done.chunks
            || self.chunks.iter().enumerate().any(|(i, c)| c.seq != i as u32 || &c.item_id != item)
        {
            return Err(StorageError::TransferFailed(format!("chunk sequence for {item} is incomplete")));
        }
        let bytes: Vec<u8> = self.chunks.iter().flat_map(|c| c.data.iter().copied()).collect();
        let received = content_id(&bytes);
        if &received != item || received != self.done.checksum {
            return Err(StorageError::DigestMismatch { item: item.clone(), received });
        }
        Ok(bytes)
    }

    pub fn into_messages(self) -> Vec<Body> {
        self.chunks.into_iter().map(Body::TransferChunk).chain([Body::TransferDone(self.done)]).collect()
    }

    /// Rebuilds a stream from received messages.
    pub fn from_messages(bodies: Vec<Body>) -> Result<Self, StorageError> {
        let mut chunks = Vec::new();
        let mut done = None;
        for body in bodies {
            match body {
                Body::TransferChunk(c) if done.is_none() => chunks.push(c),
                Body::TransferDone(d) if done.is_none() => done = Some(d),
                other => {
                    return Err(StorageError::TransferFailed(format!("unexpected {:?} in transfer", other.kind())))
                }
            }
        }
        let done = done.ok_or_else(|| StorageError::TransferFailed("transfer ended without TransferDone".into()))?;
        Ok(TransferStream { chunks, done })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub item_id: String,
    pub target_store: String,
    pub bytes: u64,
    pub chunks: u32,
    pub consumer_stage: Option<String>,
}

/// Delivery state of a catalog entry towards one subscriber. Moves only forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatalogState {
    Published,
    Transferring,
    Delivered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub item: DataItem,
    pub source_store: String,
    /// Subscriber store id → delivery state for that subscriber.
    pub subscribers: BTreeMap<String, CatalogState>,
}

impl CatalogEntry {
    /// Aggregate state: published until someone subscribes, delivered once
    /// every subscriber has the data, transferring in between.
    pub fn state(&self) -> CatalogState {
        if self.subscribers.is_empty() || self.subscribers.values().all(|s| *s == CatalogState::Published) {
            CatalogState::Published
        } else if self.subscribers.values().all(|s| *s == CatalogState::Delivered) {
            CatalogState::Delivered
        } else {
            CatalogState::Transferring
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub item_id: String,
    pub source_store: String,
    pub target_store: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum CatalogRecord {
    Publish { item: DataItem, source_store: String },
    Subscribe { item_id: String, source_store: String, target_store: String },
    State { item_id: String, source_store: String, target_store: String, state: CatalogState },
}

type EntryKey = (String, String);

/// Metadata service plus transfer broker. Bytes moving between stores are
/// relayed through the manager in chunks.
pub struct StorageManager {
    stores: RwLock<BTreeMap<String, Arc<dyn StoreHandle>>>,
    catalog: Mutex<BTreeMap<EntryKey, CatalogEntry>>,
    log: Option<Mutex<File>>,
    chunk_size: usize,
    events: Option<EventLog>,
}

impl Default for StorageManager {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl StorageManager {
    /// A manager whose catalog is not persisted.
    pub fn in_memory() -> Self {
        StorageManager {
            stores: RwLock::default(),
            catalog: Mutex::default(),
            log: None,
            chunk_size: DEFAULT_CHUNK_SIZE,
            events: None,
        }
    }

    /// A manager persisting its catalog under `root`, rebuilt from the log on open.
    pub fn open(root: &Path) -> Result<Self, StorageError> {
        fs::create_dir_all(root)?;
        let path = root.join(CATALOG_LOG);
        let mut catalog = BTreeMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                let Ok(record) = serde_json::from_str::<CatalogRecord>(&line) else {
                    continue;
                };
                apply(&mut catalog, record);
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(StorageManager { catalog: Mutex::new(catalog), log: Some(Mutex::new(log)), ..Self::in_memory() })
    }

    pub fn with_chunk_size(mut self, chunk_size: usize) -> Self {
        self.chunk_size = chunk_size.max(1);
        self
    }

    pub fn with_events(mut self, events: EventLog) -> Self {
        self.events = Some(events);
        self
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn register(&self, handle: Arc<dyn StoreHandle>) {
        self.stores.write().expect("stores lock").insert(handle.store_id().to_string(), handle);
    }

    pub fn store(&self, id: &str) -> Result<Arc<dyn StoreHandle>, StorageError> {
        self.stores
            .read()
            .expect("stores lock")
            .get(id)
            .cloned()
            .ok_or_else(|| StorageError::UnknownStore(id.to_string()))
    }

    pub fn store_ids(&self, kind: StoreKind) -> Vec<String> {
        self.stores.read().expect("stores lock").values().filter(|h| h.kind() == kind).map(|h| h.store_id().to_string()).collect()
    }

    fn persist(&self, record: &CatalogRecord) -> Result<(), StorageError> {
        if let Some(log) = &self.log {
            let line = serde_json::to_string(record).expect("catalog records serialize");
            writeln!(log.lock().expect("catalog log"), "{line}")?;
        }
        Ok(())
    }

    /// Records `item` as available from `source_store`. Idempotent per (item, store).
    pub fn publish_catalog(&self, item: &DataItem, source_store: &str) -> Result<CatalogEntry, StorageError> {
        let store = self.store(source_store)?;
        if !store.contains(&item.id)? {
            return Err(StorageError::NotFound(item.id.clone()));
        }
        let key = (item.id.clone(), source_store.to_string());
        let mut catalog = self.catalog.lock().expect("catalog lock");
        if let Some(existing) = catalog.get(&key) {
            return Ok(existing.clone());
        }
        let record = CatalogRecord::Publish { item: item.clone(), source_store: source_store.to_string() };
        self.persist(&record)?;
        apply(&mut catalog, record);
        events::record(&self.events, FlowStep::Publish, &item.id, &item.producer_stage, source_store);
        Ok(catalog[&key].clone())
    }

    pub fn entry(&self, item_id: &str, source_store: &str) -> Option<CatalogEntry> {
        self.catalog
            .lock()
            .expect("catalog lock")
            .get(&(item_id.to_string(), source_store.to_string()))
            .cloned()
    }

    /// Every catalog entry for an item, one per source store.
    pub fn entries_for(&self, item_id: &str) -> Vec<CatalogEntry> {
        self.catalog.lock().expect("catalog lock").values().filter(|e| e.item.id == item_id).cloned().collect()
    }

    pub fn catalog(&self) -> Vec<CatalogEntry> {
        self.catalog.lock().expect("catalog lock").values().cloned().collect()
    }

    /// Entries published from global stores.
    pub fn global_catalog(&self) -> Vec<CatalogEntry> {
        let globals = self.store_ids(StoreKind::Global);
        self.catalog().into_iter().filter(|e| globals.contains(&e.source_store)).collect()
    }

    pub fn subscribe(
        &self,
        item_id: &str,
        source_store: &str,
        target_store: &str,
        consumer_stage: Option<&str>,
    ) -> Result<Subscription, StorageError> {
        if source_store == target_store {
            return Err(StorageError::SelfSubscription(target_store.to_string()));
        }
        self.store(target_store)?;
        let key = (item_id.to_string(), source_store.to_string());
        let mut catalog = self.catalog.lock().expect("catalog lock");
        let entry = catalog.get(&key).ok_or_else(|| StorageError::UnknownEntry(item_id.to_string()))?;
        if !entry.subscribers.contains_key(target_store) {
            let record = CatalogRecord::Subscribe {
                item_id: item_id.to_string(),
                source_store: source_store.to_string(),
                target_store: target_store.to_string(),
            };
            self.persist(&record)?;
            apply(&mut catalog, record);
        }
        events::record(&self.events, FlowStep::Subscribe, item_id, consumer_stage.unwrap_or(""), target_store);
        Ok(Subscription {
            item_id: item_id.to_string(),
            source_store: source_store.to_string(),
            target_store: target_store.to_string(),
        })
    }

    fn set_state(&self, key: &EntryKey, target: &str, state: CatalogState) -> Result<(), StorageError> {
        let mut catalog = self.catalog.lock().expect("catalog lock");
        let current = catalog.get(key).and_then(|e| e.subscribers.get(target)).copied();
        if current.is_some_and(|c| c >= state) {
            return Ok(());
        }
        let record = CatalogRecord::State {
            item_id: key.0.clone(),
            source_store: key.1.clone(),
            target_store: target.to_string(),
            state,
        };
        self.persist(&record)?;
        apply(&mut catalog, record);
        Ok(())
    }

    /// Moves a subscribed entry's bytes from its source store to `target_store`
    /// through this manager, verifying the digest at the target.
    pub fn transfer(
        &self,
        item_id: &str,
        source_store: &str,
        target_store: &str,
        consumer_stage: Option<&str>,
    ) -> Result<DeliveryReceipt, StorageError> {
        let key = (item_id.to_string(), source_store.to_string());
        match self.entry(item_id, source_store) {
            None => return Err(StorageError::UnknownEntry(item_id.to_string())),
            Some(e) if !e.subscribers.contains_key(target_store) => {
                return Err(StorageError::NotSubscribed { item: item_id.to_string(), target: target_store.to_string() })
            }
            Some(_) => {}
        }
        let source = self.store(source_store)?;
        let target = self.store(target_store)?;
        self.set_state(&key, target_store, CatalogState::Transferring)?;
        let mut stream = source.fetch(item_id, self.chunk_size)?;
        stream.done.consumer_stage = consumer_stage.map(str::to_string);
        let receipt = target.receive(stream)?;
        self.set_state(&key, target_store, CatalogState::Delivered)?;
        Ok(receipt)
    }

    /// Subscribe plus transfer, retrying transient failures. Digest
    /// mismatches are not retried.
    pub fn deliver(
        &self,
        item_id: &str,
        source_store: &str,
        target_store: &str,
        consumer_stage: Option<&str>,
    ) -> Result<DeliveryReceipt, StorageError> {
        self.subscribe(item_id, source_store, target_store, consumer_stage)?;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.transfer(item_id, source_store, target_store, consumer_stage) {
                Err(StorageError::TransferFailed(e)) if attempt < TRANSFER_ATTEMPTS => {
                    tracing::warn!(item_id, target_store, attempt, error = %e, "retrying transfer");
                }
                other => return other,
            }
        }
    }

    /// The eligible global store with the lowest utilization factor; ties go
    /// to the lexicographically smallest store id.
    pub fn select_global_store(&self, size_bytes: u64) -> Result<StoreInfo, StorageError> {
        let handles: Vec<_> = self.stores.read().expect("stores lock").values().cloned().collect();
        let mut best: Option<StoreInfo> = None;
        for handle in handles.iter().filter(|h| h.kind() == StoreKind::Global) {
            let info = handle.info()?;
            if info.free_bytes() < size_bytes {
                continue;
            }
            best = match best {
                Some(b) if !less_utilized(&info, &b) => Some(b),
                _ => Some(info),
            };
        }
        best.ok_or(StorageError::NoCapacity(size_bytes))
    }

    /// Copies an item from the local store holding it onto the least utilized
    /// global store and publishes it there.
    pub fn promote_to_global(&self, item_id: &str) -> Result<CatalogEntry, StorageError> {
        let handles: Vec<_> = self.stores.read().expect("stores lock").values().cloned().collect();
        for global in handles.iter().filter(|h| h.kind() == StoreKind::Global) {
            if global.contains(item_id)? {
                let item = global.fetch(item_id, self.chunk_size)?.done.item;
                return self.publish_catalog(&item, global.store_id());
            }
        }
        let mut source = None;
        for local in handles.iter().filter(|h| h.kind() == StoreKind::Local) {
            if local.contains(item_id)? {
                source = Some(local.clone());
                break;
            }
        }
        let source = source.ok_or_else(|| StorageError::NotFound(item_id.to_string()))?;
        let item = source.fetch(item_id, self.chunk_size)?.done.item;
        let target = self.select_global_store(item.size_bytes)?;
        self.publish_catalog(&item, source.store_id())?;
        self.deliver(item_id, source.store_id(), &target.store_id, None)?;
        self.publish_catalog(&item, &target.store_id)
    }

    /// Reads an item from any registered store.
    pub fn pull(&self, store_id: &str, item_id: &str) -> Result<Vec<u8>, StorageError> {
        self.store(store_id)?.fetch(item_id, self.chunk_size)?.assemble()
    }
}

fn less_utilized(a: &StoreInfo, b: &StoreInfo) -> bool {
    // Compare used/capacity exactly by cross-multiplying.
    let lhs = a.used_bytes as u128 * b.capacity_bytes as u128;
    let rhs = b.used_bytes as u128 * a.capacity_bytes as u128;
    lhs < rhs || (lhs == rhs && a.store_id < b.store_id)
}

fn apply(catalog: &mut BTreeMap<EntryKey, CatalogEntry>, record: CatalogRecord) {
    match record {
        CatalogRecord::Publish { item, source_store } => {
            catalog
                .entry((item.id.clone(), source_store.clone()))
                .or_insert(CatalogEntry { item, source_store, subscribers: BTreeMap::new() });
        }
        CatalogRecord::Subscribe { item_id, source_store, target_store } => {
            if let Some(e) = catalog.get_mut(&(item_id, source_store)) {
                e.subscribers.entry(target_store).or_insert(CatalogState::Published);
            }
        }
        CatalogRecord::State { item_id, source_store, target_store, state } => {
            if let Some(e) = catalog.get_mut(&(item_id, source_store)) {
                let slot = e.subscribers.entry(target_store).or_insert(CatalogState::Published);
                *slot = (*slot).max(state);
            }
        }
    }
}

/// Store handle over a [`LocalStore`] in this process.
pub struct LocalStoreHandle {
    store: Arc<LocalStore>,
    events: Option<EventLog>,
}

impl LocalStoreHandle {
    pub fn new(store: Arc<LocalStore>) -> Self {
        LocalStoreHandle { store, events: None }
    }

    pub fn with_events(mut self, events: Option<EventLog>) -> Self {
        self.events = events;
        self
    }

    pub fn store(&self) -> &Arc<LocalStore> {
        &self.store
    }
}

impl StoreHandle for LocalStoreHandle {
    fn store_id(&self) -> &str {
        self.store.id()
    }

    fn kind(&self) -> StoreKind {
        self.store.kind()
    }

    fn info(&self) -> Result<StoreInfo, StorageError> {
        Ok(self.store.info())
    }

    fn contains(&self, item_id: &str) -> Result<bool, StorageError> {
        Ok(self.store.contains(item_id))
    }

    fn fetch(&self, item_id: &str, chunk_size: usize) -> Result<TransferStream, StorageError> {
        let item = self.store.get(item_id).ok_or_else(|| StorageError::NotFound(item_id.to_string()))?;
        let bytes = self.store.pull(item_id)?;
        Ok(TransferStream::from_bytes(item, &bytes, chunk_size, None))
    }

    fn receive(&self, stream: TransferStream) -> Result<DeliveryReceipt, StorageError> {
        let bytes = stream.assemble()?;
        let item = &stream.done.item;
        self.store.push_named(&bytes, &item.producer_stage, Some(&item.name), item.layout)?;
        let consumer = stream.done.consumer_stage.clone();
        events::record(&self.events, FlowStep::Transfer, &item.id, consumer.as_deref().unwrap_or(""), self.store.id());
        Ok(DeliveryReceipt {
            item_id: item.id.clone(),
            target_store: self.store.id().to_string(),
            bytes: bytes.len() as u64,
            chunks: stream.done.chunks,
            consumer_stage: consumer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{Layout, StoreKind};

    struct Fixture {
        _dir: tempfile::TempDir,
        manager: StorageManager,
        stores: BTreeMap<String, Arc<LocalStore>>,
    }

    fn fixture(specs: &[(&str, StoreKind, u64)]) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let manager = StorageManager::open(&dir.path().join("manager")).unwrap();
        let mut stores = BTreeMap::new();
        for (id, kind, cap) in specs {
            let store = Arc::new(LocalStore::open(*id, *kind, *id, dir.path().join(id), *cap).unwrap());
            manager.register(Arc::new(LocalStoreHandle::new(store.clone())));
            stores.insert(id.to_string(), store);
        }
        Fixture { _dir: dir, manager, stores }
    }

    #[test]
    fn publish_is_idempotent_and_queryable() {
        let f = fixture(&[("a", StoreKind::Local, 1 << 20)]);
        let item = f.stores["a"].push(b"x", "s").unwrap();
        let e1 = f.manager.publish_catalog(&item, "a").unwrap();
        let e2 = f.manager.publish_catalog(&item, "a").unwrap();
        assert_eq!(e1, e2);
        assert_eq!(f.manager.catalog().len(), 1);
        assert_eq!(f.manager.entries_for(&item.id).len(), 1);
        assert_eq!(e1.state(), CatalogState::Published);
        assert!(matches!(f.manager.publish_catalog(&item, "zz"), Err(StorageError::UnknownStore(_))));
    }

    #[test]
    fn subscribe_rules() {
        let f = fixture(&[("a", StoreKind::Local, 1 << 20), ("b", StoreKind::Local, 1 << 20)]);
        let item = f.stores["a"].push(b"x", "s").unwrap();
        assert!(matches!(f.manager.subscribe(&item.id, "a", "b", None), Err(StorageError::UnknownEntry(_))));
        f.manager.publish_catalog(&item, "a").unwrap();
        assert!(matches!(f.manager.subscribe(&item.id, "a", "a", None), Err(StorageError::SelfSubscription(_))));
        f.manager.subscribe(&item.id, "a", "b", None).unwrap();
        assert!(!f.stores["b"].contains(&item.id));
        f.manager.transfer(&item.id, "a", "b", None).unwrap();
        assert_eq!(f.stores["b"].pull(&item.id).unwrap(), b"x");
        assert_eq!(f.manager.entry(&item.id, "a").unwrap().state(), CatalogState::Delivered);
    }

    #[test]
    fn fan_out_delivers_identical_bytes() {
        let f = fixture(&[
            ("a", StoreKind::Local, 1 << 20),
            ("b", StoreKind::Local, 1 << 20),
            ("c", StoreKind::Local, 1 << 20),
        ]);
        let payload: Vec<u8> = (0..5000u32).map(|i| (i % 251) as u8).collect();
        let item = f.stores["a"].push_named(&payload, "s", Some("out.bin"), Layout::File).unwrap();
        f.manager.publish_catalog(&item, "a").unwrap();
        f.manager.deliver(&item.id, "a", "b", None).unwrap();
        f.manager.deliver(&item.id, "a", "c", None).unwrap();
        assert_eq!(f.stores["b"].pull(&item.id).unwrap(), payload);
        assert_eq!(f.stores["c"].pull(&item.id).unwrap(), payload);
        assert_eq!(f.stores["c"].get(&item.id).unwrap().name, "out.bin");
    }

    #[test]
    fn ten_mib_moves_in_three_chunks() {
        let item_bytes = vec![7u8; 10 * 1024 * 1024];
        let item = DataItem {
            id: content_id(&item_bytes),
            size_bytes: item_bytes.len() as u64,
            producer_stage: "s".into(),
            created_at: 0.0,
            name: "x".into(),
            layout: Layout::File,
            locator: String::new(),
        };
        let stream = TransferStream::from_bytes(item, &item_bytes, DEFAULT_CHUNK_SIZE, None);
        let kinds: Vec<_> = stream.clone().into_messages().iter().map(|b| b.kind().as_str()).collect();
        assert_eq!(kinds, ["TransferChunk", "TransferChunk", "TransferChunk", "TransferDone"]);
        assert_eq!(stream.assemble().unwrap(), item_bytes);
    }

    struct Corrupting(LocalStoreHandle);

    impl StoreHandle for Corrupting {
        fn store_id(&self) -> &str {
            self.0.store_id()
        }
        fn kind(&self) -> StoreKind {
            self.0.kind()
        }
        fn info(&self) -> Result<StoreInfo, StorageError> {
            self.0.info()
        }
        fn contains(&self, id: &str) -> Result<bool, StorageError> {
            self.0.contains(id)
        }
        fn fetch(&self, id: &str, chunk: usize) -> Result<TransferStream, StorageError> {
            let mut s = self.0.fetch(id, chunk)?;
            s.chunks[0].data[0] ^= 0xff;
            Ok(s)
        }
        fn receive(&self, s: TransferStream) -> Result<DeliveryReceipt, StorageError> {
            self.0.receive(s)
        }
    }

    #[test]
    fn corruption_in_flight_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let manager = StorageManager::in_memory();
        let a = Arc::new(LocalStore::open("a", StoreKind::Local, "a", dir.path().join("a"), 1 << 20).unwrap());
        let b = Arc::new(LocalStore::open("b", StoreKind::Local, "b", dir.path().join("b"), 1 << 20).unwrap());
        manager.register(Arc::new(Corrupting(LocalStoreHandle::new(a.clone()))));
        manager.register(Arc::new(LocalStoreHandle::new(b.clone())));
        let item = a.push(b"payload", "s").unwrap();
        manager.publish_catalog(&item, "a").unwrap();
        let err = manager.deliver(&item.id, "a", "b", None).unwrap_err();
        assert!(matches!(err, StorageError::DigestMismatch { .. }));
        assert!(!b.contains(&item.id));
        assert_eq!(manager.entry(&item.id, "a").unwrap().subscribers["b"], CatalogState::Transferring);
    }

    #[test]
    fn global_selection_uses_lowest_utilization() {
        let f = fixture(&[
            ("s1", StoreKind::Global, 100),
            ("s2", StoreKind::Global, 100),
            ("s3", StoreKind::Global, 100),
        ]);
        f.stores["s1"].push(&[1u8; 20], "x").unwrap();
        f.stores["s2"].push(&[2u8; 50], "x").unwrap();
        f.stores["s3"].push(&[3u8; 80], "x").unwrap();
        assert_eq!(f.manager.select_global_store(10).unwrap().store_id, "s1");
        assert!(matches!(f.manager.select_global_store(81), Err(StorageError::NoCapacity(81))));
        // Only s1 and s2 have 50 bytes free; s1 still wins.
        assert_eq!(f.manager.select_global_store(50).unwrap().store_id, "s1");
    }

    #[test]
    fn global_selection_tie_breaks_by_id() {
        let f = fixture(&[("b", StoreKind::Global, 100), ("a", StoreKind::Global, 100)]);
        f.stores["a"].push(&[1u8; 40], "x").unwrap();
        f.stores["b"].push(&[2u8; 40], "x").unwrap();
        assert_eq!(f.manager.select_global_store(1).unwrap().store_id, "a");
    }

    #[test]
    fn promotion_lists_item_globally() {
        let f = fixture(&[("local", StoreKind::Local, 1 << 20), ("g", StoreKind::Global, 1 << 20)]);
        let item = f.stores["local"].push(b"result", "summary").unwrap();
        let entry = f.manager.promote_to_global(&item.id).unwrap();
        assert_eq!(entry.source_store, "g");
        assert_eq!(f.manager.global_catalog().len(), 1);
        assert_eq!(f.manager.pull("g", &item.id).unwrap(), b"result");
        assert!(matches!(f.manager.promote_to_global("nope"), Err(StorageError::NotFound(_))));
    }

    #[test]
    fn catalog_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let a = Arc::new(LocalStore::open("a", StoreKind::Local, "a", dir.path().join("a"), 1 << 20).unwrap());
        let b = Arc::new(LocalStore::open("b", StoreKind::Local, "b", dir.path().join("b"), 1 << 20).unwrap());
        let item = a.push(b"persist", "s").unwrap();
        {
            let m = StorageManager::open(&dir.path().join("m")).unwrap();
            m.register(Arc::new(LocalStoreHandle::new(a.clone())));
            m.register(Arc::new(LocalStoreHandle::new(b.clone())));
            m.publish_catalog(&item, "a").unwrap();
            m.deliver(&item.id, "a", "b", None).unwrap();
        }
        let m = StorageManager::open(&dir.path().join("m")).unwrap();
        let entry = m.entry(&item.id, "a").unwrap();
        assert_eq!(entry.subscribers["b"], CatalogState::Delivered);
    }
}
