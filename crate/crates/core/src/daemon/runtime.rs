use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::thread::JoinHandle;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::node::Daemon;
use super::registry::{Invocation, TaskContext};
use super::{StageState, StageStatus};
use crate::autoscaler::StageMetrics;
use crate::events::{self, EventLog, FlowStep};
use crate::spec::StageSpec;
use crate::storage::{bundle, now_secs, DataItem, Layout, LocalStore};

/// Tasks run at most this many times before landing in `failed/`.
pub const TASK_ATTEMPTS: u32 = 2;

/// Per-stage record of emitted items, one JSON `DataItem` per line. Kept
/// apart from the store because deduplicated content keeps its first
/// producer there.
pub const OUTPUTS_FILE: &str = "outputs.jsonl";

/// Items a stage emitted, from its stage root; empty when it never ran.
pub(crate) fn read_outputs(stage_root: &Path) -> Vec<DataItem> {
    fs::read_to_string(stage_root.join(OUTPUTS_FILE))
        .unwrap_or_default()
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect()
}

/// Timing of one completed (or failed) task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub seq: u64,
    pub item_id: String,
    pub input_bytes: u64,
    /// Seconds between enqueue and start.
    pub wait: f64,
    pub service: f64,
    pub finished_at: f64,
    pub ok: bool,
}

pub(crate) struct QueuedTask {
    pub item: DataItem,
    /// Set for memory-channel handoffs.
    pub payload: Option<Arc<Vec<u8>>>,
    pub enqueued: Instant,
}

#[derive(Default)]
struct Window {
    start: f64,
    tasks: u64,
    failed: u64,
    bytes: u64,
    service: f64,
    wait: f64,
}

struct Inner {
    queue: VecDeque<QueuedTask>,
    target: u32,
    live: u32,
    busy: u32,
    draining: bool,
    completed: u64,
    failed: u64,
    bytes: u64,
    window: Window,
    records: Vec<TaskRecord>,
}

/// A deployed stage: a FIFO queue drained by a resizable worker pool.
pub struct StageRuntime {
    spec: StageSpec,
    endpoint: String,
    workers_max: u32,
    root: PathBuf,
    invocation: Invocation,
    store: Arc<LocalStore>,
    node: Weak<Daemon>,
    events: Option<EventLog>,
    inner: Mutex<Inner>,
    changed: Condvar,
    seq: AtomicU64,
    state_lock: Mutex<()>,
    outputs: Mutex<()>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl StageRuntime {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn start(
        spec: StageSpec,
        endpoint: &str,
        workers_max: u32,
        root: PathBuf,
        invocation: Invocation,
        store: Arc<LocalStore>,
        node: Weak<Daemon>,
        events: Option<EventLog>,
    ) -> std::io::Result<Arc<Self>> {
        for sub in ["in", "out", "failed", "state"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let workers_max = workers_max.max(1);
        let initial = spec.workers_initial.clamp(1, workers_max);
        let rt = Arc::new(StageRuntime {
            spec,
            endpoint: endpoint.to_string(),
            workers_max,
            root,
            invocation,
            store,
            node,
            events,
            outputs: Mutex::new(()),
            inner: Mutex::new(Inner {
                queue: VecDeque::new(),
                target: initial,
                live: 0,
                busy: 0,
                draining: false,
                completed: 0,
                failed: 0,
                bytes: 0,
                window: Window { start: now_secs(), ..Window::default() },
                records: Vec::new(),
            }),
            changed: Condvar::new(),
            seq: AtomicU64::new(0),
            state_lock: Mutex::new(()),
            threads: Mutex::new(Vec::new()),
        });
        rt.spawn_missing();
        Ok(rt)
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &StageSpec {
        &self.spec
    }

    pub fn workers_max(&self) -> u32 {
        self.workers_max
    }

    pub fn state_dir(&self) -> PathBuf {
        self.root.join("state")
    }

    pub fn failed_dir(&self) -> PathBuf {
        self.root.join("failed")
    }

    fn spawn_missing(self: &Arc<Self>) {
        let mut inner = self.inner.lock().expect("stage lock");
        let mut threads = self.threads.lock().expect("threads lock");
        threads.retain(|t| !t.is_finished());
        while inner.live < inner.target {
            inner.live += 1;
            let rt = self.clone();
            let name = format!("{}-w{}", self.spec.name, inner.live);
            threads.push(std::thread::Builder::new().name(name).spawn(move || rt.worker()).expect("spawn worker"));
        }
    }

    /// Sets the worker count, clamped to `[1, workers_max]`. Growing starts
    /// workers now; surplus workers exit after their current task.
    pub fn resize(self: &Arc<Self>, target: u32) -> u32 {
        let target = target.clamp(1, self.workers_max);
        {
            let mut inner = self.inner.lock().expect("stage lock");
            if inner.draining {
                return inner.target;
            }
            inner.target = target;
        }
        self.changed.notify_all();
        self.spawn_missing();
        target
    }

    /// Queues an item. With `bound`, blocks while the queue holds that many.
    pub(crate) fn enqueue(&self, task: QueuedTask, bound: Option<usize>) -> Result<(), String> {
        let mut inner = self.inner.lock().expect("stage lock");
        if let Some(bound) = bound {
            while inner.queue.len() >= bound && !inner.draining {
                inner = self.changed.wait(inner).expect("stage lock");
            }
        }
        if inner.draining {
            return Err(format!("stage `{}` is shutting down", self.spec.name));
        }
        inner.queue.push_back(task);
        drop(inner);
        self.changed.notify_all();
        Ok(())
    }

    fn worker(self: Arc<Self>) {
        loop {
            let task = {
                let mut inner = self.inner.lock().expect("stage lock");
                loop {
                    if inner.live > inner.target || (inner.draining && inner.queue.is_empty()) {
                        inner.live -= 1;
                        drop(inner);
                        self.changed.notify_all();
                        return;
                    }
                    if let Some(task) = inner.queue.pop_front() {
                        inner.busy += 1;
                        break task;
                    }
                    inner = self.changed.wait(inner).expect("stage lock");
                }
            };
            self.changed.notify_all();
            let wait = task.enqueued.elapsed().as_secs_f64();
            let started = Instant::now();
            let ok = self.process(&task);
            let service = started.elapsed().as_secs_f64();
            let mut inner = self.inner.lock().expect("stage lock");
            inner.busy -= 1;
            let size = task.item.size_bytes;
            if ok {
                inner.completed += 1;
                inner.bytes += size;
                inner.window.tasks += 1;
                inner.window.bytes += size;
                inner.window.service += service;
                inner.window.wait += wait;
            } else {
                inner.failed += 1;
                inner.window.failed += 1;
            }
            let seq = inner.records.len() as u64;
            inner.records.push(TaskRecord {
                seq,
                item_id: task.item.id.clone(),
                input_bytes: size,
                wait,
                service,
                finished_at: now_secs(),
                ok,
            });
            drop(inner);
            self.changed.notify_all();
        }
    }

    /// Runs one task with retry, publishing its outputs. Returns success.
    fn process(&self, task: &QueuedTask) -> bool {
        let seq = self.seq.fetch_add(1, Ordering::Relaxed);
        let in_dir = self.root.join("in").join(seq.to_string());
        let out_dir = self.root.join("out").join(seq.to_string());
        let input = match self.materialize(task, &in_dir) {
            Ok(p) => p,
            Err(e) => {
                self.fail(seq, &task.item, &in_dir, &e);
                return false;
            }
        };
        let mut last_error = String::new();
        for attempt in 1..=TASK_ATTEMPTS {
            let _ = fs::remove_dir_all(&out_dir);
            if let Err(e) = fs::create_dir_all(&out_dir) {
                last_error = e.to_string();
                continue;
            }
            let ctx = TaskContext {
                stage: &self.spec.name,
                input: &input,
                output_dir: &out_dir,
                params: &self.spec.params,
                state_dir: &self.root.join("state"),
                state_lock: &self.state_lock,
            };
            match self.invocation.run(&ctx).and_then(|()| self.emit(&out_dir)) {
                Ok(()) => {
                    let _ = fs::remove_dir_all(&in_dir);
                    let _ = fs::remove_dir_all(&out_dir);
                    return true;
                }
                Err(e) => {
                    tracing::warn!(stage = %self.spec.name, item = %task.item.id, attempt, error = %e, "task failed");
                    last_error = e;
                }
            }
        }
        let _ = fs::remove_dir_all(&out_dir);
        self.fail(seq, &task.item, &in_dir, &last_error);
        false
    }

    /// Writes the task input to `in/<seq>/<name>`.
    fn materialize(&self, task: &QueuedTask, in_dir: &Path) -> Result<PathBuf, String> {
        let bytes = match &task.payload {
            Some(p) => p.clone(),
            None => Arc::new(self.store.pull(&task.item.id).map_err(|e| e.to_string())?),
        };
        let name = if task.item.name.is_empty() { task.item.id.as_str() } else { task.item.name.as_str() };
        let path = in_dir.join(name);
        fs::create_dir_all(in_dir).map_err(|e| e.to_string())?;
        match task.item.layout {
            Layout::File => fs::write(&path, bytes.as_slice()).map_err(|e| e.to_string())?,
            Layout::Bundle => bundle::unpack_into(&bytes, &path).map_err(|e| e.to_string())?,
        }
        events::record(&self.events, FlowStep::InputWrite, &task.item.id, &self.spec.name, &self.endpoint);
        Ok(path)
    }

    /// Stores every entry of `out_dir` as an item and hands it downstream.
    fn emit(&self, out_dir: &Path) -> Result<(), String> {
        let mut entries: Vec<_> = fs::read_dir(out_dir)
            .map_err(|e| e.to_string())?
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        entries.sort_by_key(|e| e.file_name());
        let node = self.node.upgrade();
        for entry in entries {
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            let (bytes, layout) = if path.is_dir() {
                (bundle::pack_dir(&path).map_err(|e| e.to_string())?, Layout::Bundle)
            } else {
                (fs::read(&path).map_err(|e| e.to_string())?, Layout::File)
            };
            let item = self
                .store
                .push_named(&bytes, &self.spec.name, Some(&name), layout)
                .map_err(|e| e.to_string())?;
            // Deduplicated content keeps the first producer's name; the
            // consumer should still see this task's name.
            let item = DataItem { name, layout, producer_stage: self.spec.name.clone(), ..item };
            self.record_output(&item).map_err(|e| e.to_string())?;
            events::record(&self.events, FlowStep::Push, &item.id, &self.spec.name, self.store.id());
            if let Some(node) = &node {
                node.forward(&self.spec.name, &item, bytes)?;
            }
        }
        Ok(())
    }

    fn record_output(&self, item: &DataItem) -> std::io::Result<()> {
        use std::io::Write;
        let _guard = self.outputs.lock().expect("outputs lock");
        let mut f = fs::OpenOptions::new().create(true).append(true).open(self.root.join(OUTPUTS_FILE))?;
        writeln!(f, "{}", serde_json::to_string(item).expect("item serializes"))
    }

    fn fail(&self, seq: u64, item: &DataItem, in_dir: &Path, error: &str) {
        let dest = self.root.join("failed").join(seq.to_string());
        let _ = fs::create_dir_all(&dest);
        if in_dir.exists() {
            if let Ok(entries) = fs::read_dir(in_dir) {
                for e in entries.flatten() {
                    let _ = fs::rename(e.path(), dest.join(e.file_name()));
                }
            }
            let _ = fs::remove_dir_all(in_dir);
        }
        let _ = fs::write(dest.join("error.txt"), format!("item {}\n{error}\n", item.id));
        tracing::error!(stage = %self.spec.name, item = %item.id, error, "task moved to failed/");
    }

    /// Closes the current metrics window and starts the next.
    pub fn take_window(&self) -> StageMetrics {
        let mut inner = self.inner.lock().expect("stage lock");
        let now = now_secs();
        let w = std::mem::replace(&mut inner.window, Window { start: now, ..Window::default() });
        let mean = |sum: f64| if w.tasks > 0 { sum / w.tasks as f64 } else { 0.0 };
        StageMetrics {
            stage: self.spec.name.clone(),
            endpoint: self.endpoint.clone(),
            window_start: w.start,
            window_end: now,
            tasks_done: w.tasks,
            tasks_failed: w.failed,
            bytes_processed: w.bytes,
            mean_service_time: mean(w.service),
            mean_wait_time: mean(w.wait),
            workers: inner.target,
            queue_depth: inner.queue.len() as u64,
            busy_workers: inner.busy,
        }
    }

    pub fn status(&self) -> StageStatus {
        let inner = self.inner.lock().expect("stage lock");
        StageStatus {
            stage: self.spec.name.clone(),
            endpoint: self.endpoint.clone(),
            state: if inner.draining { StageState::Draining } else { StageState::Running },
            workers: inner.target,
            live_workers: inner.live,
            workers_max: self.workers_max,
            busy: inner.busy,
            queue_depth: inner.queue.len() as u64,
            completed: inner.completed,
            failed: inner.failed,
            bytes_processed: inner.bytes,
        }
    }

    pub fn records(&self) -> Vec<TaskRecord> {
        self.inner.lock().expect("stage lock").records.clone()
    }

    /// Stops accepting work and waits for the workers. A forced stop drops
    /// queued items instead of finishing them.
    pub fn stop(&self, force: bool) {
        {
            let mut inner = self.inner.lock().expect("stage lock");
            inner.draining = true;
            if force {
                inner.queue.clear();
            }
        }
        self.changed.notify_all();
        let threads = std::mem::take(&mut *self.threads.lock().expect("threads lock"));
        for t in threads {
            let _ = t.join();
        }
    }
}
