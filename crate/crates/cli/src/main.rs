use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use geonimbus::autoscaler::{AutoscalerConfig, ControlLoop, LoggingService, Policy};
use geonimbus::controller::{Controller, ControllerError, SystemHandle, SystemRecord};
use geonimbus::daemon::{Daemon, DaemonConfig, DaemonService};
use geonimbus::eos::write_fixture_set;
use geonimbus::local::{self, LocalOptions, WorkerOverrides};
use geonimbus::spec::{parse_spec, validate, SystemSpec, DEFAULT_STORE_CAPACITY};
use geonimbus::storage::server::ManagerService;
use geonimbus::storage::StorageManager;
use geonimbus::wire::transport::Server;

#[derive(Parser)]
#[command(name = "geonimbus", version, about = "Deploy and run staged dataflow systems across endpoints")]
struct Cli {
    /// Where system records, logs and local-mode state are kept.
    #[arg(long, global = true, env = "GEONIMBUS_WORK_ROOT", default_value = ".geonimbus")]
    work_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a spec file and print every violation.
    Validate { spec: PathBuf },
    /// Deploy a spec's stages onto its endpoint daemons.
    Deploy { spec: PathBuf },
    /// Deploy, feed every file of --input to the source stages, and wait.
    Run(RunArgs),
    /// Run a whole system inside this process.
    RunLocal(RunLocalArgs),
    /// Print stage states of a deployed system as JSON.
    Status { system: String },
    /// Stop a deployed system's stages (stored data is kept).
    Teardown {
        system: String,
        /// Drop queued work instead of draining it.
        #[arg(long)]
        force: bool,
    },
    /// Fetch a system's sink outputs into --out.
    Results {
        system: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve one endpoint.
    Daemon(DaemonArgs),
    /// Serve the storage manager.
    StorageManager {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        root: PathBuf,
    },
    /// Time local runs over a sweep of worker counts.
    Bench(BenchArgs),
    /// Write synthetic scenes and a matching query file.
    MakeFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: u64,
        #[arg(long, default_value_t = 1)]
        first_seed: u64,
        /// Scene width and height in pixels.
        #[arg(long, default_value_t = 200)]
        size: u32,
    },
}

#[derive(Args)]
struct ScalingArgs {
    /// Disable the autoscaler.
    #[arg(long)]
    no_autoscale: bool,
    /// Seconds between autoscaler decisions.
    #[arg(long, default_value_t = 5.0)]
    autoscale_interval: f64,
    /// Seconds to wait for the system to drain.
    #[arg(long, default_value_t = 3600)]
    timeout: u64,
}

impl ScalingArgs {
    fn config(&self) -> AutoscalerConfig {
        AutoscalerConfig { interval_secs: self.autoscale_interval, ..AutoscalerConfig::default() }
    }
}

#[derive(Args)]
struct RunArgs {
    spec: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Also write results here once the system is idle.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Address this process listens on for metric reports from the daemons.
    #[arg(long, default_value = "127.0.0.1:0")]
    metrics_listen: String,
    #[command(flatten)]
    scaling: ScalingArgs,
}

#[derive(Args)]
struct RunLocalArgs {
    spec: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `N` for every stage or `stage=N`; repeatable.
    #[arg(long)]
    workers: Vec<String>,
    #[command(flatten)]
    scaling: ScalingArgs,
}

#[derive(Args)]
struct DaemonArgs {
    /// Address to serve on; port 0 picks a free port. The bound address is
    /// printed as `listening <addr>`.
    #[arg(long)]
    listen: String,
    #[arg(long)]
    store_root: PathBuf,
    #[arg(long)]
    cores: u32,
    /// Endpoint name this daemon serves; also its store id.
    #[arg(long)]
    endpoint: String,
    #[arg(long, default_value_t = DEFAULT_STORE_CAPACITY)]
    capacity: u64,
}

#[derive(Args)]
struct BenchArgs {
    spec: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated worker counts.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4])]
    sweep: Vec<u32>,
    /// Only this stage is swept; every stage when omitted.
    #[arg(long)]
    stage: Option<String>,
    /// Extra fixed overrides, as for run-local.
    #[arg(long)]
    workers: Vec<String>,
    /// Write the table as JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<ControllerError> for Failure {
    fn from(e: ControllerError) -> Self {
        Failure { code: e.exit_code() as u8, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 3, error }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 3, error: e.into() }
    }
}

fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate { spec } => {
            load_spec(spec)?;
            println!("ok");
            Ok(())
        }
        Command::Deploy { spec } => {
            let spec = load_spec(spec)?;
            let controller = Controller::remote(&spec);
            let handle = controller.deploy_system(&spec)?;
            save_record(&cli.work_root, &spec, true)?;
            println!("deployed {} ({} stages)", spec.name, handle.plan().order.len());
            Ok(())
        }
        Command::Run(args) => run(&cli.work_root, args),
        Command::RunLocal(args) => run_local(&cli.work_root, args),
        Command::Status { system } => {
            let handle = attach(&cli.work_root, system)?;
            print_json(&handle.status()?);
            Ok(())
        }
        Command::Teardown { system, force } => {
            let handle = attach(&cli.work_root, system)?;
            handle.teardown(*force)?;
            save_record(&cli.work_root, handle.spec(), false)?;
            println!("stopped {system}");
            Ok(())
        }
        Command::Results { system, out } => {
            let handle = attach(&cli.work_root, system)?;
            let summary = handle.write_results(out)?;
            println!("{} items, {} summaries written to {}", summary.items.len(), summary.summaries.len(), out.display());
            Ok(())
        }
        Command::Daemon(args) => serve_daemon(args),
        Command::StorageManager { listen, root } => {
            let manager = StorageManager::open(root).context("opening storage manager state")?;
            let service = Arc::new(ManagerService::new(Arc::new(manager), root.join("global")));
            serve(listen, service)
        }
        Command::Bench(args) => bench(&cli.work_root, args),
        Command::MakeFixtures { out, count, first_seed, size } => {
            let seeds: Vec<u64> = (*first_seed..first_seed + count).collect();
            let set = write_fixture_set(out, &seeds, *size).context("writing fixtures")?;
            println!("{} scenes in {}; query at {}", set.scenes.len(), set.scene_dir.display(), set.query_path.display());
            Ok(())
        }
    }
}

fn load_spec(path: &Path) -> Result<SystemSpec, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(invalid)?;
    let spec = parse_spec(&text).map_err(invalid)?;
    let violations = validate(&spec);
    if !violations.is_empty() {
        for v in &violations {
            println!("{v}");
        }
        return Err(invalid(anyhow::anyhow!("{} violation(s) in {}", violations.len(), path.display())));
    }
    Ok(spec)
}

fn save_record(work_root: &Path, spec: &SystemSpec, running: bool) -> Result<(), Failure> {
    let record = SystemRecord { name: spec.name.clone(), spec_document: spec.to_document(), running };
    Ok(record.save(work_root)?)
}

fn attach(work_root: &Path, system: &str) -> Result<Arc<SystemHandle>, Failure> {
    let record = SystemRecord::load(work_root, system)?;
    let spec = parse_spec(&record.spec_document).map_err(invalid)?;
    Ok(Controller::remote(&spec).attach(&spec, record.running)?)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(work_root: &Path, args: &RunArgs) -> Result<(), Failure> {
    let spec = load_spec(&args.spec)?;
    let logging = Arc::new(LoggingService::new());
    let metrics = Server::bind(&args.metrics_listen, logging.clone()).context("binding metrics listener")?;
    let controller = Controller::remote(&spec).with_logging_address(Some(metrics.address().to_string()));
    let handle = controller.deploy_system(&spec)?;
    save_record(work_root, &spec, true)?;

    let control = if args.scaling.no_autoscale {
        None
    } else {
        let config = args.scaling.config();
        let interval = Duration::from_secs_f64(config.interval_secs);
        let audit = work_root.join(format!("{}.{}", spec.name, local::AUDIT_LOG));
        let cl = ControlLoop::new(logging.clone(), Policy::new(config, handle.limits()), handle.clone())
            .with_audit_log(&audit)?;
        let cl = Arc::new(cl);
        Some(cl.clone().spawn(interval))
    };
    let n = handle.ingest_dir(&args.input)?;
    let waited = handle.wait_quiescent(Duration::from_secs(args.scaling.timeout), Duration::from_millis(100));
    if let Some(c) = control {
        c.stop();
    }
    metrics.shutdown();
    let status = waited?;
    handle.promote_results()?;
    if let Some(out) = &args.out {
        handle.write_results(out)?;
    }
    eprintln!("ingested {n} items");
    print_json(&status);
    Ok(())
}

fn run_local(work_root: &Path, args: &RunLocalArgs) -> Result<(), Failure> {
    let spec = load_spec(&args.spec)?;
    let mut opts = LocalOptions::new(&work_root.join("local").join(&spec.name));
    opts.workers = WorkerOverrides::parse(&args.workers).map_err(|e| invalid(anyhow::anyhow!(e)))?;
    opts.workers.apply(&spec).map_err(|e| invalid(anyhow::anyhow!(e)))?;
    opts.autoscale = !args.scaling.no_autoscale;
    opts.autoscaler = args.scaling.config();
    opts.timeout = Duration::from_secs(args.scaling.timeout);
    if opts.root.exists() {
        fs::remove_dir_all(&opts.root)?;
    }
    let report = local::run_local(&spec, &args.input, &args.out, &opts)?;
    println!(
        "{}: {} items in {:.3} s, {} results, {} autoscaler decisions",
        report.system,
        report.items_ingested,
        report.seconds,
        report.results.items.len(),
        report.decisions.len()
    );
    Ok(())
}

fn bench(work_root: &Path, args: &BenchArgs) -> Result<(), Failure> {
    let spec = load_spec(&args.spec)?;
    let mut opts = LocalOptions::new(&work_root.join("bench").join(&spec.name));
    opts.workers = WorkerOverrides::parse(&args.workers).map_err(|e| invalid(anyhow::anyhow!(e)))?;
    opts.workers.apply(&spec).map_err(|e| invalid(anyhow::anyhow!(e)))?;
    if let Some(stage) = &args.stage {
        if spec.stage(stage).is_none() {
            return Err(invalid(anyhow::anyhow!("unknown stage `{stage}`")));
        }
    }
    if opts.root.exists() {
        fs::remove_dir_all(&opts.root)?;
    }
    let rows = local::bench(&spec, &args.input, args.stage.as_deref(), &args.sweep, &opts)?;
    let table = serde_json::to_string_pretty(&rows).expect("rows serialize");
    if let Some(out) = &args.out {
        fs::write(out, &table)?;
    }
    println!("{table}");
    Ok(())
}

fn serve_daemon(args: &DaemonArgs) -> Result<(), Failure> {
    let config = DaemonConfig::new(&args.endpoint, &args.store_root, args.capacity);
    let daemon = Daemon::start(config).map_err(|e| Failure { code: 3, error: e.into() })?;
    tracing::info!(endpoint = %args.endpoint, cores = args.cores, "daemon starting");
    serve(&args.listen, Arc::new(DaemonService::new(daemon)))
}

fn serve(listen: &str, handler: Arc<dyn geonimbus::wire::transport::Handler>) -> Result<(), Failure> {
    let server = Server::bind(listen, handler).with_context(|| format!("binding {listen}"))?;
    let mut stdout = std::io::stdout();
    writeln!(stdout, "listening {}", server.address())?;
    stdout.flush()?;
    server.join();
    Ok(())
}
