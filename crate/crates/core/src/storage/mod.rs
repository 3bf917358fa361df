//! Wide-area storage: content-addressed data stores, a storage manager with a
//! catalog (metadata service), utilization-based placement on global stores,
//! and the publish → subscribe → transfer flow that moves data between the
//! stores of producer and consumer stages.

pub mod bundle;
mod manager;
pub mod server;
mod store;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use manager::{
    CatalogEntry, CatalogState, DeliveryReceipt, LocalStoreHandle, StorageManager, StoreHandle, Subscription,
    TransferStream,
};
pub use store::LocalStore;

/// Hex SHA-256 of `bytes`; the identity of every stored item.
pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn now_secs() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Local,
    Global,
}

/// Whether an item is a single file or a packed directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    File,
    Bundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataItem {
    pub id: String,
    pub size_bytes: u64,
    pub producer_stage: String,
    /// Seconds since the Unix epoch.
    pub created_at: f64,
    /// File or directory name the producer gave the output.
    pub name: String,
    pub layout: Layout,
    /// Store-local payload path.
    pub locator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreInfo {
    pub store_id: String,
    pub kind: StoreKind,
    pub capacity_bytes: u64,
    pub used_bytes: u64,
    pub endpoint: String,
}

impl StoreInfo {
    pub fn free_bytes(&self) -> u64 {
        self.capacity_bytes.saturating_sub(self.used_bytes)
    }

    pub fn utilization(&self) -> UtilizationFactor {
        UtilizationFactor::of(self)
    }
}

/// `used_bytes / capacity_bytes`, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct UtilizationFactor(pub f64);

impl UtilizationFactor {
    pub fn of(info: &StoreInfo) -> Self {
        if info.capacity_bytes == 0 {
            return UtilizationFactor(1.0);
        }
        UtilizationFactor(info.used_bytes as f64 / info.capacity_bytes as f64)
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("store `{store}` is full: {needed} bytes needed, {free} free")]
    StoreFull { store: String, needed: u64, free: u64 },
    #[error("item {0} not found")]
    NotFound(String),
    #[error("item {0} failed its digest check")]
    CorruptItem(String),
    #[error("unknown store `{0}`")]
    UnknownStore(String),
    #[error("no catalog entry for item {0}")]
    UnknownEntry(String),
    #[error("store `{0}` cannot subscribe to its own catalog entry")]
    SelfSubscription(String),
    #[error("store `{target}` is not subscribed to item {item}")]
    NotSubscribed { item: String, target: String },
    #[error("transfer failed: {0}")]
    TransferFailed(String),
    #[error("digest mismatch for item {item}: received {received}")]
    DigestMismatch { item: String, received: String },
    #[error("no global store has {0} bytes free")]
    NoCapacity(u64),
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

impl StorageError {
    /// Stable code used when the error crosses the wire.
    pub fn code(&self) -> &'static str {
        match self {
            StorageError::StoreFull { .. } => "StoreFull",
            StorageError::NotFound(_) => "NotFound",
            StorageError::CorruptItem(_) => "CorruptItem",
            StorageError::UnknownStore(_) => "UnknownStore",
            StorageError::UnknownEntry(_) => "UnknownEntry",
            StorageError::SelfSubscription(_) => "SelfSubscription",
            StorageError::NotSubscribed { .. } => "NotSubscribed",
            StorageError::TransferFailed(_) => "TransferFailed",
            StorageError::DigestMismatch { .. } => "DigestMismatch",
            StorageError::NoCapacity(_) => "NoCapacity",
            StorageError::IoFailure(_) => "IoFailure",
        }
    }

    /// Rebuilds an error from its wire code.
    pub fn from_remote(code: &str, message: String) -> Self {
        match code {
            "NotFound" => StorageError::NotFound(message),
            "CorruptItem" => StorageError::CorruptItem(message),
            "UnknownStore" => StorageError::UnknownStore(message),
            "UnknownEntry" => StorageError::UnknownEntry(message),
            "SelfSubscription" => StorageError::SelfSubscription(message),
            "DigestMismatch" => StorageError::DigestMismatch { item: message, received: String::new() },
            "NoCapacity" => StorageError::NoCapacity(0),
            _ => StorageError::TransferFailed(format!("[{code}] {message}")),
        }
    }
}

impl From<crate::wire::WireError> for StorageError {
    fn from(e: crate::wire::WireError) -> Self {
        match e {
            crate::wire::WireError::Remote { code, message } => StorageError::from_remote(&code, message),
            other => StorageError::TransferFailed(other.to_string()),
        }
    }
}
