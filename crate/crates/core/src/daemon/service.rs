use std::sync::Arc;

use super::Daemon;
use crate::storage::server::{read_transfer, reply_with_stream};
use crate::storage::{StorageError, TransferStream};
use crate::wire::transport::{Connection, Handler, Reply};
use crate::wire::{Body, ItemList, Message, StatusReport, WireError};

/// Request handler for a daemon process.
pub struct DaemonService {
    daemon: Arc<Daemon>,
}

impl DaemonService {
    pub fn new(daemon: Arc<Daemon>) -> Self {
        DaemonService { daemon }
    }
}

impl Handler for DaemonService {
    fn handle(&self, first: Message, conn: &mut Connection) -> Result<(), WireError> {
        let id = first.correlation_id;
        let d = &self.daemon;
        match first.body {
            Body::Ping(_) => Reply { conn, correlation_id: id }.ack(Some(d.endpoint().to_string())),
            Body::DeployStage(req) => {
                let mut reply = Reply { conn, correlation_id: id };
                match d.deploy(req) {
                    Ok(ready) => {
                        reply.info(ready)?;
                        reply.ack(None)
                    }
                    Err(e) => reply.error(e.code(), e),
                }
            }
            Body::ScaleCommand(cmd) => {
                let reply = Reply { conn, correlation_id: id };
                match d.resize(&cmd.stage, cmd.target_workers) {
                    Ok(n) => reply.ack(Some(n.to_string())),
                    Err(e) => reply.error(e.code(), e),
                }
            }
            Body::StatusRequest(req) => {
                let mut reply = Reply { conn, correlation_id: id };
                reply.info(StatusReport { stages: d.status(&req.stages) })?;
                reply.ack(None)
            }
            Body::Teardown(req) => {
                let stopped = d.teardown(&req.stages, req.force);
                Reply { conn, correlation_id: id }.ack(Some(stopped.join(",")))
            }
            Body::DataAvailable(note) => {
                let reply = Reply { conn, correlation_id: id };
                match d.on_data_available(&note) {
                    Ok(()) => reply.ack(None),
                    Err(e) => reply.error(e.code(), e),
                }
            }
            b @ (Body::TransferChunk(_) | Body::TransferDone(_)) => {
                let stream = read_transfer(b, conn, id)?;
                let reply = Reply { conn, correlation_id: id };
                match d.accept_transfer(stream) {
                    Ok(receipt) => reply.ack(Some(serde_json::to_string(&receipt).expect("receipt serializes"))),
                    Err(e) => reply.error(e.code(), e),
                }
            }
            Body::FetchItem(req) => {
                let store = d.store();
                let stream = match store.get(&req.item_id) {
                    None => Err(StorageError::NotFound(req.item_id.clone())),
                    Some(item) => store.pull(&req.item_id).map(|bytes| {
                        let chunk = if req.chunk_size == 0 { crate::wire::DEFAULT_CHUNK_SIZE } else { req.chunk_size as usize };
                        TransferStream::from_bytes(item, &bytes, chunk, None)
                    }),
                };
                reply_with_stream(Reply { conn, correlation_id: id }, stream)
            }
            Body::ListItems(req) => {
                let mut items = match &req.producer_stage {
                    Some(stage) => d.outputs(stage),
                    None => d.store().items(),
                };
                items.retain(|i| req.item_id.as_ref().is_none_or(|x| &i.id == x));
                let mut reply = Reply { conn, correlation_id: id };
                reply.info(ItemList { items })?;
                reply.ack(None)
            }
            other => Reply { conn, correlation_id: id }
                .error("Unsupported", format!("daemon does not handle {:?}", other.kind())),
        }
    }
}
