use serde::{Deserialize, Serialize};

use crate::autoscaler::{ScaleCommand, StageMetrics};
use crate::daemon::StageStatus;
use crate::spec::{Channel, StageSpec};
use crate::storage::{DataItem, StoreKind};

/// A framed protocol message. Requests and their responses share `correlation_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub correlation_id: u64,
    pub body: Body,
}

impl Message {
    pub fn new(correlation_id: u64, body: impl Into<Body>) -> Self {
        Message { correlation_id, body: body.into() }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.body, Body::Ack(_) | Body::Error(_))
    }
}

macro_rules! bodies {
    ($($kind:ident),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum MessageKind { $($kind),* }

        impl MessageKind {
            pub const ALL: &'static [MessageKind] = &[$(MessageKind::$kind),*];

            pub fn as_str(self) -> &'static str {
                match self { $(MessageKind::$kind => stringify!($kind)),* }
            }

            pub fn from_name(name: &str) -> Option<Self> {
                match name { $(stringify!($kind) => Some(MessageKind::$kind),)* _ => None }
            }
        }

        #[derive(Debug, Clone, PartialEq)]
        pub enum Body { $($kind($kind)),* }

        impl Body {
            pub fn kind(&self) -> MessageKind {
                match self { $(Body::$kind(_) => MessageKind::$kind),* }
            }

            pub(crate) fn to_value(&self) -> serde_json::Result<serde_json::Value> {
                match self { $(Body::$kind(b) => serde_json::to_value(b)),* }
            }

            pub(crate) fn from_value(kind: MessageKind, value: serde_json::Value) -> serde_json::Result<Body> {
                match kind { $(MessageKind::$kind => serde_json::from_value(value).map(Body::$kind)),* }
            }
        }

        $(impl From<$kind> for Body {
            fn from(b: $kind) -> Body { Body::$kind(b) }
        })*
    };
}

bodies!(
    DeployStage,
    StageReady,
    DataAvailable,
    SubscribeCatalog,
    TransferChunk,
    TransferDone,
    MetricsReport,
    ScaleCommand,
    Ack,
    Error,
    Ping,
    RegisterStore,
    FetchItem,
    ListItems,
    ItemList,
    StatusRequest,
    StatusReport,
    Teardown,
    Promote,
);

/// A downstream stage that receives a producer's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consumer {
    pub stage: String,
    pub endpoint: String,
    pub address: String,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployStage {
    pub system: String,
    pub endpoint: String,
    pub stage: StageSpec,
    pub workers_max: u32,
    pub consumers: Vec<Consumer>,
    pub storage_manager: Option<String>,
    pub logging_service: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReady {
    pub stage: String,
    pub endpoint: String,
    pub workers: u32,
}

/// Sent by a producer's store to publish a catalog entry, and relayed by the
/// storage manager to each consumer so its store can subscribe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataAvailable {
    pub item: DataItem,
    pub source_store: String,
    pub consumers: Vec<Consumer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscribeCatalog {
    pub item_id: String,
    pub source_store: String,
    pub target_store: String,
    pub consumer_stage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferChunk {
    pub item_id: String,
    pub seq: u32,
    #[serde(with = "base64_bytes")]
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferDone {
    pub item: DataItem,
    /// Hex SHA-256 of the concatenated chunk payloads.
    pub checksum: String,
    pub chunks: u32,
    pub consumer_stage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub endpoint: String,
    pub metrics: Vec<StageMetrics>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Ack {
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Error {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Ping {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterStore {
    pub store_id: String,
    pub kind: StoreKind,
    /// Daemon address for local stores; global stores live in the manager.
    pub address: Option<String>,
    pub capacity_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchItem {
    pub item_id: String,
    pub store_id: Option<String>,
    pub chunk_size: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ListItems {
    pub store_id: Option<String>,
    pub producer_stage: Option<String>,
    pub item_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemList {
    pub items: Vec<DataItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StatusRequest {
    /// Empty means every stage on the endpoint.
    pub stages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub stages: Vec<StageStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Teardown {
    pub stages: Vec<String>,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Promote {
    pub item_id: String,
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
