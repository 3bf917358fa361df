//! Proptest strategies producing a random message of every kind.

use geonimbus::autoscaler::{ScaleAction, ScaleCommand, StageMetrics};
use geonimbus::daemon::{StageState, StageStatus};
use geonimbus::spec::{Channel, StageKind, StageSpec, WorkersMax};
use geonimbus::storage::{DataItem, Layout, StoreKind};
use geonimbus::wire::*;
use proptest::collection::vec;
use proptest::option;
use proptest::prelude::*;

fn name() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_.:-]{0,12}"
}

/// Any text, including quotes, escapes and non-ASCII.
fn text() -> impl Strategy<Value = String> {
    any::<String>().prop_map(|s| s.chars().take(24).collect())
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), -1e12..1e12f64, any::<f64>().prop_filter("finite", |x| x.is_finite())]
}

fn channel() -> impl Strategy<Value = Channel> {
    prop_oneof![Just(Channel::File), Just(Channel::Memory), Just(Channel::Network)]
}

fn item() -> impl Strategy<Value = DataItem> {
    (name(), any::<u64>(), name(), finite(), text(), any::<bool>(), text()).prop_map(
        |(id, size_bytes, producer_stage, created_at, name, bundle, locator)| DataItem {
            id,
            size_bytes,
            producer_stage,
            created_at,
            name,
            layout: if bundle { Layout::Bundle } else { Layout::File },
            locator,
        },
    )
}

fn consumer() -> impl Strategy<Value = Consumer> {
    (name(), name(), name(), channel()).prop_map(|(stage, endpoint, address, channel)| Consumer {
        stage,
        endpoint,
        address,
        channel,
    })
}

fn param() -> impl Strategy<Value = toml::Value> {
    prop_oneof![
        any::<i64>().prop_map(toml::Value::Integer),
        (-1e9..1e9f64).prop_map(toml::Value::Float),
        any::<bool>().prop_map(toml::Value::Boolean),
        text().prop_map(toml::Value::String),
        vec(name(), 0..3).prop_map(|v| toml::Value::Array(v.into_iter().map(toml::Value::String).collect())),
    ]
}

fn stage_spec() -> impl Strategy<Value = StageSpec> {
    (
        name(),
        any::<bool>(),
        text(),
        name(),
        any::<u32>(),
        option::of(any::<u32>()),
        vec((name(), param()), 0..4),
    )
        .prop_map(|(name, sub, entry, endpoint, workers_initial, max, params)| StageSpec {
            name,
            kind: if sub { StageKind::Subprocess } else { StageKind::Function },
            entry,
            endpoint,
            workers_initial,
            workers_max: max.map_or(WorkersMax::Auto, WorkersMax::Fixed),
            params: params.into_iter().collect(),
        })
}

fn metrics() -> impl Strategy<Value = StageMetrics> {
    (
        (name(), name(), finite(), finite()),
        (any::<u64>(), any::<u64>(), any::<u64>()),
        (finite(), finite(), any::<u32>(), any::<u64>(), any::<u32>()),
    )
        .prop_map(
            |(
                (stage, endpoint, window_start, window_end),
                (tasks_done, tasks_failed, bytes_processed),
                (mean_service_time, mean_wait_time, workers, queue_depth, busy_workers),
            )| StageMetrics {
                stage,
                endpoint,
                window_start,
                window_end,
                tasks_done,
                tasks_failed,
                bytes_processed,
                mean_service_time,
                mean_wait_time,
                workers,
                queue_depth,
                busy_workers,
            },
        )
}

fn status() -> impl Strategy<Value = StageStatus> {
    (
        (name(), name(), 0..3u8),
        (any::<u32>(), any::<u32>(), any::<u32>(), any::<u32>()),
        (any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>()),
    )
        .prop_map(
            |((stage, endpoint, s), (workers, live_workers, workers_max, busy), (queue_depth, completed, failed, bytes_processed))| {
                StageStatus {
                    stage,
                    endpoint,
                    state: [StageState::Running, StageState::Draining, StageState::Stopped][s as usize],
                    workers,
                    live_workers,
                    workers_max,
                    busy,
                    queue_depth,
                    completed,
                    failed,
                    bytes_processed,
                }
            },
        )
}

fn store_kind() -> impl Strategy<Value = StoreKind> {
    prop_oneof![Just(StoreKind::Local), Just(StoreKind::Global)]
}

pub fn body() -> impl Strategy<Value = Body> {
    prop_oneof![
        (name(), name(), stage_spec(), any::<u32>(), vec(consumer(), 0..3), option::of(name()), option::of(name()))
            .prop_map(|(system, endpoint, stage, workers_max, consumers, storage_manager, logging_service)| {
                Body::from(DeployStage { system, endpoint, stage, workers_max, consumers, storage_manager, logging_service })
            }),
        (name(), name(), any::<u32>()).prop_map(|(stage, endpoint, workers)| Body::from(StageReady { stage, endpoint, workers })),
        (item(), name(), vec(consumer(), 0..3))
            .prop_map(|(item, source_store, consumers)| Body::from(DataAvailable { item, source_store, consumers })),
        (name(), name(), name(), option::of(name())).prop_map(|(item_id, source_store, target_store, consumer_stage)| {
            Body::from(SubscribeCatalog { item_id, source_store, target_store, consumer_stage })
        }),
        (name(), any::<u32>(), vec(any::<u8>(), 0..64)).prop_map(|(item_id, seq, data)| Body::from(TransferChunk { item_id, seq, data })),
        (item(), "[0-9a-f]{64}", any::<u32>(), option::of(name())).prop_map(|(item, checksum, chunks, consumer_stage)| {
            Body::from(TransferDone { item, checksum, chunks, consumer_stage })
        }),
        (name(), vec(metrics(), 0..3)).prop_map(|(endpoint, metrics)| Body::from(MetricsReport { endpoint, metrics })),
        (name(), 0..3u8, any::<u32>(), text()).prop_map(|(stage, a, target_workers, reason)| {
            let action = [ScaleAction::AddWorker, ScaleAction::RemoveWorker, ScaleAction::Noop][a as usize];
            Body::from(ScaleCommand { stage, action, target_workers, reason })
        }),
        option::of(text()).prop_map(|detail| Body::from(Ack { detail })),
        (name(), text()).prop_map(|(code, message)| Body::from(Error { code, message })),
        Just(Body::from(Ping {})),
        (name(), store_kind(), option::of(name()), any::<u64>()).prop_map(|(store_id, kind, address, capacity_bytes)| {
            Body::from(RegisterStore { store_id, kind, address, capacity_bytes })
        }),
        (name(), option::of(name()), any::<u32>())
            .prop_map(|(item_id, store_id, chunk_size)| Body::from(FetchItem { item_id, store_id, chunk_size })),
        (option::of(name()), option::of(name()), option::of(name())).prop_map(|(store_id, producer_stage, item_id)| {
            Body::from(ListItems { store_id, producer_stage, item_id })
        }),
        vec(item(), 0..3).prop_map(|items| Body::from(ItemList { items })),
        vec(name(), 0..3).prop_map(|stages| Body::from(StatusRequest { stages })),
        vec(status(), 0..3).prop_map(|stages| Body::from(StatusReport { stages })),
        (vec(name(), 0..3), any::<bool>()).prop_map(|(stages, force)| Body::from(Teardown { stages, force })),
        name().prop_map(|item_id| Body::from(Promote { item_id })),
    ]
}

pub fn message() -> impl Strategy<Value = Message> {
    (any::<u64>(), body()).prop_map(|(id, body)| Message::new(id, body))
}
