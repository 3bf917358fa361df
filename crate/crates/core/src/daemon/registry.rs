use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::spec::{StageKind, StageSpec};

/// What a stage function sees for one task.
pub struct TaskContext<'a> {
    pub stage: &'a str,
    /// The input file, or directory for bundle items.
    pub input: &'a Path,
    /// Every file or directory left here becomes one output item.
    pub output_dir: &'a Path,
    pub params: &'a toml::Table,
    /// Persistent per-stage directory shared by all tasks.
    pub state_dir: &'a Path,
    /// Serializes access to `state_dir`.
    pub state_lock: &'a Mutex<()>,
}

impl TaskContext<'_> {
    pub fn param_i64(&self, key: &str) -> Option<i64> {
        self.params.get(key).and_then(|v| v.as_integer())
    }

    pub fn param_f64(&self, key: &str) -> Option<f64> {
        self.params.get(key).and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(|v| v.as_str())
    }

    pub fn input_name(&self) -> String {
        self.input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

pub type StageFn = Arc<dyn Fn(&TaskContext<'_>) -> Result<(), String> + Send + Sync>;

/// Resolved invocation of a stage's entry point.
#[derive(Clone)]
pub enum Invocation {
    Function(StageFn),
    /// Run through `sh -c`, with the input path and output dir as `$1` and `$2`.
    Subprocess(String),
}

impl Invocation {
    pub fn run(&self, ctx: &TaskContext<'_>) -> Result<(), String> {
        match self {
            Invocation::Function(f) => f(ctx),
            Invocation::Subprocess(cmd) => run_subprocess(cmd, ctx),
        }
    }
}

fn run_subprocess(cmd: &str, ctx: &TaskContext<'_>) -> Result<(), String> {
    let mut command = Command::new("sh");
    command
        .arg("-c")
        .arg(format!("{cmd} \"$@\""))
        .arg("sh")
        .arg(ctx.input)
        .arg(ctx.output_dir)
        .env("GEONIMBUS_STAGE", ctx.stage)
        .env("GEONIMBUS_STATE_DIR", ctx.state_dir);
    for (key, value) in ctx.params {
        let text = match value {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        command.env(format!("GEONIMBUS_PARAM_{}", key.to_ascii_uppercase()), text);
    }
    let out = command.output().map_err(|e| format!("cannot start `{cmd}`: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`{cmd}` exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Named stage functions available to `function` stages.
#[derive(Clone, Default)]
pub struct StageRegistry {
    functions: BTreeMap<String, StageFn>,
}

impl StageRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Utility stages plus the Earth-observation stages.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("util.copy", util_copy);
        reg.register("util.delay", util_delay);
        reg.register("util.fail", util_fail);
        crate::eos::stages::register(&mut reg);
        reg
    }

    pub fn register<F>(&mut self, entry: &str, f: F)
    where
        F: Fn(&TaskContext<'_>) -> Result<(), String> + Send + Sync + 'static,
    {
        self.functions.insert(entry.to_string(), Arc::new(f));
    }

    pub fn contains(&self, entry: &str) -> bool {
        self.functions.contains_key(entry)
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }

    pub fn resolve(&self, stage: &StageSpec) -> Result<Invocation, String> {
        match stage.kind {
            StageKind::Subprocess => Ok(Invocation::Subprocess(stage.entry.clone())),
            StageKind::Function => self
                .functions
                .get(&stage.entry)
                .cloned()
                .map(Invocation::Function)
                .ok_or_else(|| format!("no stage function named `{}`", stage.entry)),
        }
    }
}

pub(crate) fn copy_path(from: &Path, to: &Path) -> std::io::Result<()> {
    if from.is_dir() {
        fs::create_dir_all(to)?;
        for entry in fs::read_dir(from)? {
            let entry = entry?;
            copy_path(&entry.path(), &to.join(entry.file_name()))?;
        }
        Ok(())
    } else {
        fs::copy(from, to).map(|_| ())
    }
}

fn util_copy(ctx: &TaskContext<'_>) -> Result<(), String> {
    copy_path(ctx.input, &ctx.output_dir.join(ctx.input_name())).map_err(|e| e.to_string())
}

/// Waits `delay_ms` (sleeping, or spinning when `busy = true`), then emits the
/// input repeated `expand` times.
fn util_delay(ctx: &TaskContext<'_>) -> Result<(), String> {
    let delay = Duration::from_millis(ctx.param_i64("delay_ms").unwrap_or(0).max(0) as u64);
    let busy = ctx.params.get("busy").and_then(|v| v.as_bool()).unwrap_or(false);
    if busy {
        let until = Instant::now() + delay;
        let mut x: u64 = 1;
        while Instant::now() < until {
            for _ in 0..1000 {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            }
        }
        std::hint::black_box(x);
    } else {
        std::thread::sleep(delay);
    }
    let expand = ctx.param_i64("expand").unwrap_or(1).max(1) as usize;
    let bytes = fs::read(ctx.input).map_err(|e| e.to_string())?;
    fs::write(ctx.output_dir.join(ctx.input_name()), bytes.repeat(expand)).map_err(|e| e.to_string())
}

/// Fails when the input name contains `match` (every input by default).
fn util_fail(ctx: &TaskContext<'_>) -> Result<(), String> {
    let pattern = ctx.param_str("match").unwrap_or("");
    if ctx.input_name().contains(pattern) {
        Err(format!("refusing {}", ctx.input_name()))
    } else {
        util_copy(ctx)
    }
}
