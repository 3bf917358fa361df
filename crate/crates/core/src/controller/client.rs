use std::sync::Arc;

use super::ControllerError;
use crate::autoscaler::ScaleCommand;
use crate::daemon::{Daemon, StageStatus};
use crate::storage::{content_id, now_secs, DataItem, Layout, TransferStream};
use crate::wire::transport::{request, Connection};
use crate::wire::{
    Body, DeployStage, FetchItem, ListItems, Ping, StageReady, StatusRequest, Teardown, DEFAULT_CHUNK_SIZE,
};

/// The controller's view of one endpoint daemon.
pub trait EndpointClient: Send + Sync {
    fn endpoint(&self) -> &str;
    /// Address consumers on other endpoints use to reach this daemon.
    fn address(&self) -> String;
    fn ping(&self) -> Result<(), ControllerError>;
    fn deploy(&self, req: DeployStage) -> Result<StageReady, ControllerError>;
    fn status(&self, stages: &[String]) -> Result<Vec<StageStatus>, ControllerError>;
    fn scale(&self, command: &ScaleCommand) -> Result<u32, ControllerError>;
    fn teardown(&self, stages: &[String], force: bool) -> Result<Vec<String>, ControllerError>;
    fn ingest(&self, stage: &str, name: &str, bytes: &[u8]) -> Result<(), ControllerError>;
    /// Items in the endpoint store produced by `stage`.
    fn list_items(&self, stage: &str) -> Result<Vec<DataItem>, ControllerError>;
    fn fetch(&self, item_id: &str) -> Result<Vec<u8>, ControllerError>;
}

/// A daemon living in this process.
pub struct LocalEndpoint(pub Arc<Daemon>);

impl EndpointClient for LocalEndpoint {
    fn endpoint(&self) -> &str {
        self.0.endpoint()
    }

    fn address(&self) -> String {
        format!("local://{}", self.0.endpoint())
    }

    fn ping(&self) -> Result<(), ControllerError> {
        Ok(())
    }

    fn deploy(&self, req: DeployStage) -> Result<StageReady, ControllerError> {
        let stage = req.stage.name.clone();
        self.0.deploy(req).map_err(|e| ControllerError::StageFailed { stage, detail: e.to_string() })
    }

    fn status(&self, stages: &[String]) -> Result<Vec<StageStatus>, ControllerError> {
        Ok(self.0.status(stages))
    }

    fn scale(&self, command: &ScaleCommand) -> Result<u32, ControllerError> {
        self.0
            .resize(&command.stage, command.target_workers)
            .map_err(|e| ControllerError::StageFailed { stage: command.stage.clone(), detail: e.to_string() })
    }

    fn teardown(&self, stages: &[String], force: bool) -> Result<Vec<String>, ControllerError> {
        Ok(self.0.teardown(stages, force))
    }

    fn ingest(&self, stage: &str, name: &str, bytes: &[u8]) -> Result<(), ControllerError> {
        self.0
            .ingest(stage, name, bytes)
            .map(|_| ())
            .map_err(|e| ControllerError::StageFailed { stage: stage.to_string(), detail: e.to_string() })
    }

    fn list_items(&self, stage: &str) -> Result<Vec<DataItem>, ControllerError> {
        Ok(self.0.outputs(stage))
    }

    fn fetch(&self, item_id: &str) -> Result<Vec<u8>, ControllerError> {
        self.0.store().pull(item_id).map_err(|e| ControllerError::Runtime(e.to_string()))
    }
}

/// A daemon reached over the wire.
pub struct RemoteEndpoint {
    endpoint: String,
    address: String,
}

impl RemoteEndpoint {
    pub fn new(endpoint: impl Into<String>, address: impl Into<String>) -> Self {
        RemoteEndpoint { endpoint: endpoint.into(), address: address.into() }
    }

    fn call(&self, body: impl Into<Body>) -> Result<(Vec<Body>, Option<String>), ControllerError> {
        match request(&self.address, body) {
            Ok((replies, ack)) => Ok((replies, ack.detail)),
            Err(e @ (crate::wire::WireError::Connect { .. } | crate::wire::WireError::Io(_))) => {
                Err(ControllerError::EndpointUnreachable { endpoint: self.endpoint.clone(), detail: e.to_string() })
            }
            Err(e) => Err(ControllerError::Runtime(format!("{}: {e}", self.endpoint))),
        }
    }
}

impl EndpointClient for RemoteEndpoint {
    fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn address(&self) -> String {
        self.address.clone()
    }

    fn ping(&self) -> Result<(), ControllerError> {
        self.call(Ping {}).map(|_| ())
    }

    fn deploy(&self, req: DeployStage) -> Result<StageReady, ControllerError> {
        let stage = req.stage.name.clone();
        let (replies, _) = self.call(req).map_err(|e| match e {
            ControllerError::Runtime(detail) => ControllerError::StageFailed { stage: stage.clone(), detail },
            other => other,
        })?;
        replies
            .into_iter()
            .find_map(|b| match b {
                Body::StageReady(r) => Some(r),
                _ => None,
            })
            .ok_or_else(|| ControllerError::StageFailed { stage, detail: "no StageReady in reply".into() })
    }

    fn status(&self, stages: &[String]) -> Result<Vec<StageStatus>, ControllerError> {
        let (replies, _) = self.call(StatusRequest { stages: stages.to_vec() })?;
        Ok(replies
            .into_iter()
            .filter_map(|b| match b {
                Body::StatusReport(r) => Some(r.stages),
                _ => None,
            })
            .flatten()
            .collect())
    }

    fn scale(&self, command: &ScaleCommand) -> Result<u32, ControllerError> {
        let (_, detail) = self.call(command.clone())?;
        Ok(detail.and_then(|d| d.parse().ok()).unwrap_or(command.target_workers))
    }

    fn teardown(&self, stages: &[String], force: bool) -> Result<Vec<String>, ControllerError> {
        let (_, detail) = self.call(Teardown { stages: stages.to_vec(), force })?;
        Ok(detail.unwrap_or_default().split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
    }

    fn ingest(&self, stage: &str, name: &str, bytes: &[u8]) -> Result<(), ControllerError> {
        let item = DataItem {
            id: content_id(bytes),
            size_bytes: bytes.len() as u64,
            producer_stage: String::new(),
            created_at: now_secs(),
            name: name.to_string(),
            layout: Layout::File,
            locator: String::new(),
        };
        let stream = TransferStream::from_bytes(item, bytes, DEFAULT_CHUNK_SIZE, Some(stage.to_string()));
        let unreachable =
            |e: crate::wire::WireError| ControllerError::EndpointUnreachable { endpoint: self.endpoint.clone(), detail: e.to_string() };
        let mut conn = Connection::connect(&self.address).map_err(unreachable)?;
        conn.exchange(stream.into_messages())
            .map(|_| ())
            .map_err(|e| ControllerError::StageFailed { stage: stage.to_string(), detail: e.to_string() })
    }

    fn list_items(&self, stage: &str) -> Result<Vec<DataItem>, ControllerError> {
        let (replies, _) =
            self.call(ListItems { store_id: None, producer_stage: Some(stage.to_string()), item_id: None })?;
        Ok(replies
            .into_iter()
            .filter_map(|b| match b {
                Body::ItemList(l) => Some(l.items),
                _ => None,
            })
            .flatten()
            .collect())
    }

    fn fetch(&self, item_id: &str) -> Result<Vec<u8>, ControllerError> {
        let (replies, _) =
            self.call(FetchItem { item_id: item_id.to_string(), store_id: None, chunk_size: DEFAULT_CHUNK_SIZE as u32 })?;
        TransferStream::from_messages(replies)
            .and_then(|s| s.assemble())
            .map_err(|e| ControllerError::Runtime(e.to_string()))
    }
}
