//! Network face of the storage manager, and the handle it uses to reach
//! stores owned by remote daemons.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use super::{
    DeliveryReceipt, LocalStore, LocalStoreHandle, StorageError, StorageManager, StoreHandle, StoreInfo, StoreKind,
    TransferStream,
};
use crate::spec::Channel;
use crate::wire::transport::{request, Connection, Handler, Reply};
use crate::wire::{
    Body, DataAvailable, FetchItem, ItemList, ListItems, Message, RegisterStore, WireError,
};

/// A store living inside a daemon, reached over the wire.
pub struct RemoteStoreHandle {
    store_id: String,
    address: String,
    capacity: u64,
}

impl RemoteStoreHandle {
    pub fn new(store_id: impl Into<String>, address: impl Into<String>, capacity: u64) -> Self {
        RemoteStoreHandle { store_id: store_id.into(), address: address.into(), capacity }
    }

    fn list(&self, item_id: Option<&str>) -> Result<ItemList, StorageError> {
        let (replies, _) = request(
            &self.address,
            ListItems { store_id: Some(self.store_id.clone()), producer_stage: None, item_id: item_id.map(str::to_string) },
        )?;
        match replies.into_iter().next() {
            Some(Body::ItemList(list)) => Ok(list),
            _ => Err(StorageError::TransferFailed("ListItems without ItemList reply".into())),
        }
    }
}

impl StoreHandle for RemoteStoreHandle {
    fn store_id(&self) -> &str {
        &self.store_id
    }

    fn kind(&self) -> StoreKind {
        StoreKind::Local
    }

    fn info(&self) -> Result<StoreInfo, StorageError> {
        let used = self.list(None)?.items.iter().map(|i| i.size_bytes).sum();
        Ok(StoreInfo {
            store_id: self.store_id.clone(),
            kind: StoreKind::Local,
            capacity_bytes: self.capacity,
            used_bytes: used,
            endpoint: self.store_id.clone(),
        })
    }

    fn contains(&self, item_id: &str) -> Result<bool, StorageError> {
        Ok(self.list(Some(item_id))?.items.iter().any(|i| i.id == item_id))
    }

    fn fetch(&self, item_id: &str, chunk_size: usize) -> Result<TransferStream, StorageError> {
        let (replies, _) = request(
            &self.address,
            FetchItem { item_id: item_id.to_string(), store_id: Some(self.store_id.clone()), chunk_size: chunk_size as u32 },
        )?;
        TransferStream::from_messages(replies)
    }

    fn receive(&self, stream: TransferStream) -> Result<DeliveryReceipt, StorageError> {
        let mut conn = Connection::connect(&self.address)?;
        let (_, ack) = conn.exchange(stream.into_messages())?;
        let detail = ack.detail.ok_or_else(|| StorageError::TransferFailed("receipt missing".into()))?;
        serde_json::from_str(&detail).map_err(|e| StorageError::TransferFailed(e.to_string()))
    }
}

/// Serves one fetch request from a store, replying with the chunk stream.
pub fn reply_with_stream(reply: Reply<'_>, stream: Result<TransferStream, StorageError>) -> Result<(), WireError> {
    match stream {
        Ok(stream) => {
            let mut reply = reply;
            for body in stream.into_messages() {
                reply.info(body)?;
            }
            reply.ack(None)
        }
        Err(e) => reply.error(e.code(), e),
    }
}

/// Reads the follow-up frames of a transfer whose first chunk was `first`.
pub fn read_transfer(first: Body, conn: &mut Connection, correlation_id: u64) -> Result<TransferStream, WireError> {
    let mut bodies = vec![first];
    while !matches!(bodies.last(), Some(Body::TransferDone(_))) {
        let msg = conn.recv_required()?;
        if msg.correlation_id != correlation_id {
            return Err(WireError::Protocol("interleaved transfer".into()));
        }
        match msg.body {
            b @ (Body::TransferChunk(_) | Body::TransferDone(_)) => bodies.push(b),
            other => return Err(WireError::Protocol(format!("unexpected {:?} inside a transfer", other.kind()))),
        }
    }
    TransferStream::from_messages(bodies).map_err(|e| WireError::Protocol(e.to_string()))
}

/// Request handler for the `storage-manager` service.
pub struct ManagerService {
    manager: Arc<StorageManager>,
    global_root: PathBuf,
    globals: Mutex<BTreeMap<String, Arc<LocalStore>>>,
}

impl ManagerService {
    pub fn new(manager: Arc<StorageManager>, global_root: PathBuf) -> Self {
        ManagerService { manager, global_root, globals: Mutex::default() }
    }

    pub fn manager(&self) -> &Arc<StorageManager> {
        &self.manager
    }

    /// Opens (or reopens) a global store hosted by this manager.
    pub fn add_global_store(&self, store_id: &str, capacity: u64) -> Result<(), StorageError> {
        let mut globals = self.globals.lock().expect("globals lock");
        if globals.contains_key(store_id) {
            return Ok(());
        }
        let store = Arc::new(LocalStore::open(
            store_id,
            StoreKind::Global,
            store_id,
            self.global_root.join(store_id),
            capacity,
        )?);
        self.manager.register(Arc::new(LocalStoreHandle::new(store.clone())));
        globals.insert(store_id.to_string(), store);
        Ok(())
    }

    fn register(&self, req: RegisterStore) -> Result<(), StorageError> {
        match req.kind {
            StoreKind::Global => self.add_global_store(&req.store_id, req.capacity_bytes),
            StoreKind::Local => {
                let address = req
                    .address
                    .ok_or_else(|| StorageError::TransferFailed("local store registration needs an address".into()))?;
                self.manager.register(Arc::new(RemoteStoreHandle::new(req.store_id, address, req.capacity_bytes)));
                Ok(())
            }
        }
    }

    /// Publishes the entry, then tells every network consumer so its store subscribes.
    fn publish(&self, req: DataAvailable) -> Result<(), StorageError> {
        self.manager.publish_catalog(&req.item, &req.source_store)?;
        for consumer in req.consumers.into_iter().filter(|c| c.channel == Channel::Network) {
            let note = DataAvailable {
                item: req.item.clone(),
                source_store: req.source_store.clone(),
                consumers: vec![consumer.clone()],
            };
            request(&consumer.address, note)?;
        }
        Ok(())
    }
}

impl Handler for ManagerService {
    fn handle(&self, first: Message, conn: &mut Connection) -> Result<(), WireError> {
        let id = first.correlation_id;
        let reply = Reply { conn, correlation_id: id };
        let fail = |reply: Reply<'_>, e: StorageError| reply.error(e.code(), e);
        match first.body {
            Body::Ping(_) => reply.ack(Some("storage-manager".into())),
            Body::RegisterStore(req) => match self.register(req) {
                Ok(()) => reply.ack(None),
                Err(e) => fail(reply, e),
            },
            Body::DataAvailable(req) => match self.publish(req) {
                Ok(()) => reply.ack(None),
                Err(e) => fail(reply, e),
            },
            Body::SubscribeCatalog(req) => {
                match self.manager.deliver(&req.item_id, &req.source_store, &req.target_store, req.consumer_stage.as_deref()) {
                    Ok(receipt) => reply.ack(Some(serde_json::to_string(&receipt).expect("receipt serializes"))),
                    Err(e) => fail(reply, e),
                }
            }
            Body::FetchItem(req) => {
                let chunk = if req.chunk_size == 0 { self.manager.chunk_size() } else { req.chunk_size as usize };
                let stream = match req.store_id {
                    Some(store) => self.manager.store(&store).and_then(|s| s.fetch(&req.item_id, chunk)),
                    None => {
                        let entry = self.manager.entries_for(&req.item_id).into_iter().next();
                        match entry {
                            Some(e) => self.manager.store(&e.source_store).and_then(|s| s.fetch(&req.item_id, chunk)),
                            None => Err(StorageError::NotFound(req.item_id.clone())),
                        }
                    }
                };
                reply_with_stream(reply, stream)
            }
            Body::ListItems(req) => {
                let globals = self.globals.lock().expect("globals lock").clone();
                let mut items: Vec<_> = match &req.store_id {
                    Some(id) => globals.get(id).map(|s| s.items()).unwrap_or_default(),
                    None => self.manager.global_catalog().into_iter().map(|e| e.item).collect(),
                };
                items.retain(|i| {
                    req.item_id.as_ref().is_none_or(|id| &i.id == id)
                        && req.producer_stage.as_ref().is_none_or(|p| &i.producer_stage == p)
                });
                let mut reply = reply;
                reply.info(ItemList { items })?;
                reply.ack(None)
            }
            Body::Promote(req) => match self.manager.promote_to_global(&req.item_id) {
                Ok(entry) => reply.ack(Some(serde_json::to_string(&entry).expect("entry serializes"))),
                Err(e) => fail(reply, e),
            },
            other => reply.error("Unsupported", format!("storage manager does not handle {:?}", other.kind())),
        }
    }
}
