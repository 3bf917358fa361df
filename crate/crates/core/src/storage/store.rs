use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{content_id, now_secs, DataItem, Layout, StorageError, StoreInfo, StoreKind};

const LOG_FILE: &str = "items.log";

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum LogRecord {
    Put { item: DataItem },
    Delete { id: String },
}

struct State {
    items: BTreeMap<String, DataItem>,
    used: u64,
    log: File,
}

/// A data store backed by a directory: payloads at `<root>/<id[..2]>/<id>`,
/// item metadata in an append-only `items.log`.
pub struct LocalStore {
    id: String,
    kind: StoreKind,
    endpoint: String,
    root: PathBuf,
    capacity: u64,
    state: Mutex<State>,
}

impl std::fmt::Debug for LocalStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalStore").field("id", &self.id).field("root", &self.root).finish()
    }
}

impl LocalStore {
    /// Opens (or creates) a store, replaying its metadata log.
    pub fn open(
        id: impl Into<String>,
        kind: StoreKind,
        endpoint: impl Into<String>,
        root: impl Into<PathBuf>,
        capacity: u64,
    ) -> Result<Self, StorageError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let log_path = root.join(LOG_FILE);
        let mut items = BTreeMap::new();
        if log_path.exists() {
            for line in BufReader::new(File::open(&log_path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                // A torn final line from a crash is skipped.
                match serde_json::from_str::<LogRecord>(&line) {
                    Ok(LogRecord::Put { item }) => {
                        items.insert(item.id.clone(), item);
                    }
                    Ok(LogRecord::Delete { id }) => {
                        items.remove(&id);
                    }
                    Err(e) => tracing::warn!(store = %root.display(), error = %e, "skipping bad log line"),
                }
            }
        }
        let used = items.values().map(|i| i.size_bytes).sum();
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(LocalStore {
            id: id.into(),
            kind,
            endpoint: endpoint.into(),
            root,
            capacity,
            state: Mutex::new(State { items, used, log }),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn payload_path(&self, id: &str) -> PathBuf {
        let prefix = id.get(..2).unwrap_or(id);
        self.root.join(prefix).join(id)
    }

    pub fn info(&self) -> StoreInfo {
        let state = self.state.lock().expect("store lock");
        StoreInfo {
            store_id: self.id.clone(),
            kind: self.kind,
            capacity_bytes: self.capacity,
            used_bytes: state.used,
            endpoint: self.endpoint.clone(),
        }
    }

    /// Stores `bytes`, named by their digest.
    pub fn push(&self, bytes: &[u8], producer_stage: &str) -> Result<DataItem, StorageError> {
        self.push_named(bytes, producer_stage, None, Layout::File)
    }

    /// Stores `bytes`. Pushing content that is already present returns the
    /// existing item without consuming more capacity.
    pub fn push_named(
        &self,
        bytes: &[u8],
        producer_stage: &str,
        name: Option<&str>,
        layout: Layout,
    ) -> Result<DataItem, StorageError> {
        let id = content_id(bytes);
        let mut state = self.state.lock().expect("store lock");
        if let Some(existing) = state.items.get(&id) {
            return Ok(existing.clone());
        }
        let size = bytes.len() as u64;
        if state.used + size > self.capacity {
            return Err(StorageError::StoreFull {
                store: self.id.clone(),
                needed: size,
                free: self.capacity.saturating_sub(state.used),
            });
        }
        let path = self.payload_path(&id);
        fs::create_dir_all(path.parent().expect("payload has a parent"))?;
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        let item = DataItem {
            id: id.clone(),
            size_bytes: size,
            producer_stage: producer_stage.to_string(),
            created_at: now_secs(),
            name: name.map(str::to_string).unwrap_or_else(|| id.clone()),
            layout,
            locator: path.to_string_lossy().into_owned(),
        };
        let record = serde_json::to_string(&LogRecord::Put { item: item.clone() }).expect("item serializes");
        writeln!(state.log, "{record}")?;
        state.used += size;
        state.items.insert(id, item.clone());
        Ok(item)
    }

    /// Returns the stored bytes after checking them against their digest.
    pub fn pull(&self, id: &str) -> Result<Vec<u8>, StorageError> {
        if !self.contains(id) {
            return Err(StorageError::NotFound(id.to_string()));
        }
        let bytes = fs::read(self.payload_path(id))?;
        if content_id(&bytes) != id {
            return Err(StorageError::CorruptItem(id.to_string()));
        }
        Ok(bytes)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.state.lock().expect("store lock").items.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<DataItem> {
        self.state.lock().expect("store lock").items.get(id).cloned()
    }

    pub fn items(&self) -> Vec<DataItem> {
        let mut items: Vec<_> = self.state.lock().expect("store lock").items.values().cloned().collect();
        items.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        items
    }

    pub fn delete(&self, id: &str) -> Result<(), StorageError> {
        let mut state = self.state.lock().expect("store lock");
        let item = state.items.remove(id).ok_or_else(|| StorageError::NotFound(id.to_string()))?;
        state.used -= item.size_bytes;
        let record = serde_json::to_string(&LogRecord::Delete { id: id.to_string() }).expect("serializes");
        writeln!(state.log, "{record}")?;
        let _ = fs::remove_file(self.payload_path(id));
        Ok(())
    }
}
