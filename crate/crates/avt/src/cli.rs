//! The `avt` command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use avt_core::filter::{FilterDecision, FilterPolicy};
use avt_core::health::Temperatures;
use avt_core::sim::{default_decode_table, simulate, SimScenario};
use avt_core::stats::FleetStats;
use avt_core::{CanId, DecodeTable, Timestamp};

use crate::catalog::{ingest_trip, Catalog, CatalogError, FleetConfig, IngestError, Removal, TripQuery};
use crate::dacman::DacmanConfig;
use crate::formats::load_decode_table;
use crate::pipeline::clean::RosterIds;
use crate::pipeline::{self, clean_trip, filter_trip, quarantine_trip, synchronize_trip, CleanContext, PipelineConfig};
use crate::recorder::{run_recorder, shutdown_time, RecorderOptions, StopSignal};
use crate::telemetry::heartbeat::{self, HeartbeatState};
use crate::telemetry::homebase::{self, Homebase};
use crate::telemetry::lighthouse::{send_envelope, snapshot_from_trip, DeviceSnapshot, Lighthouse};
use crate::telemetry::{self, read_key_file, DeviceRegistry, KeyPair};

#[derive(Debug, Parser)]
#[command(name = "avt", version, about = "Record, process and catalog naturalistic driving trips")]
pub struct Cli {
    /// Base directory for catalog.db, processed/ and quarantine/.
    #[arg(long, env = "AVT_HOME", global = true)]
    home: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Target {
    /// A single trip directory.
    #[arg(long)]
    trip: Option<PathBuf>,
    /// A directory of trip directories, processed in parallel.
    #[arg(long)]
    root: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Batch {
    #[command(flatten)]
    target: Target,
    /// Worker threads for --root (default: number of cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct Signals {
    /// Decode table file (default: built-in table).
    #[arg(long)]
    decode_table: Option<PathBuf>,
    #[arg(long, default_value = "speed")]
    speed_signal: String,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
    #[arg(long)]
    rider: Option<u32>,
    #[arg(long)]
    vehicle: Option<u32>,
    /// Only vehicles with this technology; repeatable.
    #[arg(long = "technology")]
    technologies: Vec<String>,
    /// Only trips with at least one epoch of this label.
    #[arg(long)]
    epoch: Option<String>,
}

impl QueryArgs {
    fn query(&self) -> TripQuery {
        TripQuery {
            technologies: self.technologies.clone(),
            epoch_label: self.epoch.clone(),
            from: self.from,
            to: self.to,
            rider_id: self.rider,
            vehicle_id: self.vehicle,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a drive and record it as a trip directory.
    Simulate {
        /// Scenario JSON; without it a constant-speed drive is simulated.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 60.0)]
        duration_s: f64,
        /// Speed in m/s.
        #[arg(long, default_value_t = 20.0)]
        speed: f64,
        #[arg(long, value_delimiter = ',', default_value = "face,road,dash")]
        cameras: Vec<String>,
        /// Wall-clock start in microseconds since the epoch.
        #[arg(long, default_value_t = 1_464_771_600_000_000)]
        start_us: u64,
        /// Logger config (trip_dacman.json); defaults to rider 1, subject 1, vehicle 1, study 1.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Arbitration id that keeps the logger awake, in hex.
        #[arg(long, default_value = "3e9")]
        wake_id: String,
        /// Directory the trip directory is created in.
        #[arg(long)]
        out: PathBuf,
    },
    /// Copy finished trips from a logger drive to central storage.
    Offload {
        #[arg(long)]
        drive: PathBuf,
        #[arg(long)]
        raw_root: PathBuf,
    },
    /// Repair trip directories in place.
    Clean {
        #[command(flatten)]
        batch: Batch,
        /// Fleet roster JSON used to repair ids.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Decide which trips to keep and quarantine the rest.
    Filter {
        #[command(flatten)]
        batch: Batch,
        /// Filter policy JSON.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        quarantine_dir: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[command(flatten)]
        signals: Signals,
        /// Report decisions without moving anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Write the synchronized video and CAN tables.
    Sync {
        #[command(flatten)]
        batch: Batch,
        #[arg(long)]
        processed: Option<PathBuf>,
        #[command(flatten)]
        signals: Signals,
    },
    /// Register processed trips in the catalog.
    Ingest {
        #[command(flatten)]
        batch: Batch,
        /// Fleet roster JSON applied before ingesting.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        processed: Option<PathBuf>,
        #[arg(long, default_value = "speed")]
        speed_signal: String,
    },
    /// Fleet totals over the cataloged trips.
    Stats {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[command(flatten)]
        query: QueryArgs,
    },
    /// GPS tracks as GeoJSON.
    ExportGps {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[command(flatten)]
        query: QueryArgs,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Central telemetry receiver.
    Homebase {
        #[command(subcommand)]
        cmd: HomebaseCmd,
    },
    /// Device telemetry sender.
    Lighthouse {
        #[command(subcommand)]
        cmd: LighthouseCmd,
    },
    /// Fleet status HTTP API.
    Heartbeat {
        #[command(subcommand)]
        cmd: HeartbeatCmd,
    },
    /// Generate a key pair as <out>.key and <out>.pub.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum HomebaseCmd {
    Serve {
        #[arg(long, default_value = "127.0.0.1:7700")]
        listen: SocketAddr,
        /// Server secret key file.
        #[arg(long)]
        key: PathBuf,
        /// Device registry JSON.
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum LighthouseCmd {
    Run {
        #[arg(long)]
        server: SocketAddr,
        /// Device secret key file.
        #[arg(long)]
        key: PathBuf,
        /// Server public key file.
        #[arg(long)]
        server_key: PathBuf,
        #[arg(long)]
        rider: u32,
        /// Where the logger writes trips; the newest one feeds the report.
        #[arg(long)]
        trip_root: Option<PathBuf>,
        #[arg(long, default_value_t = 60.0)]
        interval_s: f64,
        /// Stop after this many reports.
        #[arg(long)]
        count: Option<u64>,
        #[arg(long, default_value_t = 1_000_000_000_000)]
        disk_capacity: u64,
    },
}

#[derive(Debug, Subcommand)]
enum HeartbeatCmd {
    Serve {
        #[arg(long, default_value = "127.0.0.1:7780")]
        listen: SocketAddr,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Offload { .. } => "offload",
            Command::Clean { .. } => "clean",
            Command::Filter { .. } => "filter",
            Command::Sync { .. } => "sync",
            Command::Ingest { .. } => "ingest",
            Command::Stats { .. } => "stats",
            Command::ExportGps { .. } => "export-gps",
            Command::Homebase { .. } => "homebase",
            Command::Lighthouse { .. } => "lighthouse",
            Command::Heartbeat { .. } => "heartbeat",
            Command::Keygen { .. } => "keygen",
        }
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {name}: {msg}");
            ExitCode::from(1)
        }
    }
}

struct Ctx {
    home: Option<PathBuf>,
    format: Format,
}

impl Ctx {
    fn path(&self, explicit: Option<PathBuf>, under_home: &str, flag: &str) -> anyhow::Result<PathBuf> {
        explicit
            .or_else(|| self.home.as_ref().map(|h| h.join(under_home)))
            .ok_or_else(|| anyhow!("pass --{flag} or set AVT_HOME"))
    }

    fn catalog(&self, explicit: Option<PathBuf>) -> anyhow::Result<Catalog> {
        let path = self.path(explicit, "catalog.db", "catalog")?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).with_context(|| parent.display().to_string())?;
        }
        Catalog::open(&path).with_context(|| path.display().to_string())
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx { home: cli.home, format: cli.format };
    match cli.command {
        Command::Simulate { scenario, seed, duration_s, speed, cameras, start_us, config, wake_id, out } => {
            let cams: Vec<&str> = cameras.iter().map(String::as_str).collect();
            let scenario = match scenario {
                Some(p) => serde_json::from_str::<SimScenario>(&read(&p)?).with_context(|| p.display().to_string())?,
                None => SimScenario::constant_speed(seed, Timestamp::from_micros(start_us), duration_s, speed, &cams),
            };
            let config = match config {
                Some(p) => DacmanConfig::load(&p)?,
                None => {
                    let cams: Vec<&str> = scenario.cameras.iter().map(String::as_str).collect();
                    DacmanConfig::new(1, 1, 1, 1, &cams)
                }
            };
            let wake: CanId = wake_id.parse().map_err(|e| anyhow!("bad --wake-id {wake_id:?}: {e:?}"))?;
            let streams = simulate(&scenario).map_err(|e| anyhow!("{e}"))?;
            let mut opts = RecorderOptions::new(&out);
            if let Some(ts) = shutdown_time(&streams.can, wake) {
                opts.stop = StopSignal::at(ts);
            }
            let outcome = run_recorder(&config, &streams, &opts)?;
            println!("{}", outcome.layout.root().display());
            Ok(())
        }
        Command::Offload { drive, raw_root } => {
            for dst in pipeline::offload_trips(&drive, &raw_root)? {
                println!("{}", dst.display());
            }
            Ok(())
        }
        Command::Clean { batch, config } => {
            let roster = match config {
                Some(p) => roster_ids(&FleetConfig::load(&p)?),
                None => BTreeMap::new(),
            };
            let cctx = CleanContext { roster };
            run_batch(&ctx, &batch, |dir| {
                let report = clean_trip(dir, &cctx)?;
                let status = if !report.recoverable {
                    "unrecoverable"
                } else if report.fixes.is_empty() {
                    "clean"
                } else {
                    "fixed"
                };
                let detail = format!("{} fixes, {} findings", report.fixes.len(), report.findings.len());
                Ok(Outcome::new(dir, status, detail, &report))
            })
        }
        Command::Filter { batch, policy, quarantine_dir, catalog, signals, dry_run } => {
            let policy: FilterPolicy = match policy {
                Some(p) => serde_json::from_str(&read(&p)?).with_context(|| p.display().to_string())?,
                None => FilterPolicy::default(),
            };
            let cfg = pipeline_config(&signals)?;
            let quarantine = if dry_run { None } else { Some(ctx.path(quarantine_dir, "quarantine", "quarantine-dir")?) };
            let catalog = if dry_run || (catalog.is_none() && ctx.home.is_none()) { None } else { Some(ctx.catalog(catalog)?) };
            run_batch(&ctx, &batch, |dir| match filter_trip(dir, &policy, &cfg)? {
                FilterDecision::Keep => Ok(Outcome::new(dir, "keep", String::new(), &FilterDecision::Keep)),
                FilterDecision::Remove(reason) => {
                    let decision = FilterDecision::Remove(reason);
                    let Some(qdir) = &quarantine else {
                        return Ok(Outcome::new(dir, "remove", reason.as_str().to_string(), &decision));
                    };
                    let dst = quarantine_trip(dir, qdir)?;
                    if let Some(c) = &catalog {
                        c.record_removal(&Removal {
                            trip_name: trip_name(dir),
                            reason: reason.as_str().into(),
                            decided_ts: telemetry::now(),
                            quarantine_path: dst.display().to_string(),
                        })?;
                    }
                    Ok(Outcome::new(dir, "removed", format!("{} -> {}", reason.as_str(), dst.display()), &decision))
                }
            })
        }
        Command::Sync { batch, processed, signals } => {
            let processed = ctx.path(processed, "processed", "processed")?;
            let table = decode_table(&signals)?;
            run_batch(&ctx, &batch, |dir| {
                let out = synchronize_trip(dir, &table, &processed)?;
                Ok(Outcome::new(dir, "synced", format!("{} slots", out.slots), &out))
            })
        }
        Command::Ingest { batch, config, catalog, processed, speed_signal } => {
            let processed = ctx.path(processed, "processed", "processed")?;
            let catalog = ctx.catalog(catalog)?;
            if let Some(p) = config {
                catalog.apply_fleet(&FleetConfig::load(&p)?)?;
            }
            let labels = catalog.epoch_labels()?;
            run_batch(&ctx, &batch, |dir| match ingest_trip(&catalog, dir, &processed, &speed_signal, &labels) {
                Ok(id) => Ok(Outcome::new(dir, "ingested", format!("trip_id {id}"), &id)),
                Err(IngestError::Catalog(CatalogError::DuplicateTrip(_))) => {
                    Ok(Outcome::new(dir, "skipped", "already registered".into(), &()))
                }
                Err(e) => Err(e.into()),
            })
        }
        Command::Stats { catalog, query } => {
            let stats = ctx.catalog(catalog)?.fleet_stats(&query.query())?;
            print!("{}", render_stats(&stats, ctx.format));
            Ok(())
        }
        Command::ExportGps { catalog, query, out } => {
            let geo = crate::catalog::geojson_tracks(&ctx.catalog(catalog)?, &query.query())?;
            let text = serde_json::to_string_pretty(&geo)? + "\n";
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| p.display().to_string())?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Homebase { cmd: HomebaseCmd::Serve { listen, key, registry, catalog } } => {
            let registry = DeviceRegistry::load(&key, &registry)?;
            let catalog = Arc::new(ctx.catalog(catalog)?);
            let history = catalog.last_sequences()?;
            let hb = Arc::new(Mutex::new(Homebase::with_history(registry, catalog, history)));
            runtime()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(listen).await?;
                announce("homebase", listener.local_addr()?);
                homebase::serve(listener, hb).await
            })?;
            Ok(())
        }
        Command::Lighthouse {
            cmd: LighthouseCmd::Run { server, key, server_key, rider, trip_root, interval_s, count, disk_capacity },
        } => {
            let keys = KeyPair::from_secret(&read_key_file(&key)?)?;
            let server_public = read_key_file(&server_key)?;
            let mut lh = Lighthouse::new(rider, keys, server_public, interval_s, disk_capacity);
            runtime()?.block_on(async move {
                let mut sent = 0u64;
                while count.is_none_or(|c| sent < c) {
                    if sent > 0 {
                        tokio::time::sleep(lh.interval()).await;
                    }
                    sent += 1;
                    let now = telemetry::now();
                    let snap = device_snapshot(trip_root.as_deref(), now, disk_capacity);
                    let report = lh.next_report(snap, now);
                    let envelope = lh.seal(&report)?;
                    let result = async {
                        let mut stream = tokio::time::timeout(Duration::from_secs(10), tokio::net::TcpStream::connect(server)).await??;
                        send_envelope(&mut stream, &envelope).await
                    }
                    .await;
                    match result {
                        Ok(Ok(())) => println!("sent seq {}", report.seq),
                        Ok(Err(r)) => eprintln!("lighthouse: seq {} rejected: {r}", report.seq),
                        Err(e) => eprintln!("lighthouse: send failed: {e}"),
                    }
                }
                anyhow::Ok(())
            })
        }
        Command::Heartbeat { cmd: HeartbeatCmd::Serve { listen, catalog } } => {
            let state = HeartbeatState::new(Arc::new(ctx.catalog(catalog)?));
            runtime()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(listen).await?;
                announce("heartbeat", listener.local_addr()?);
                heartbeat::serve(listener, state).await
            })?;
            Ok(())
        }
        Command::Keygen { out } => {
            let (k, p) = KeyPair::generate().write(&out).with_context(|| out.display().to_string())?;
            println!("{}\n{}", k.display(), p.display());
            Ok(())
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| path.display().to_string())
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn announce(what: &str, addr: SocketAddr) {
    println!("{what} listening on {addr}");
    let _ = std::io::stdout().flush();
}

fn device_snapshot(trip_root: Option<&Path>, now: Timestamp, capacity: u64) -> DeviceSnapshot {
    let newest = trip_root.and_then(|r| pipeline::trip_dirs(r).ok()).and_then(|d| d.into_iter().last());
    if let Some(snap) = newest.and_then(|d| snapshot_from_trip(&d, now).ok()) {
        return snap;
    }
    DeviceSnapshot {
        trip: None,
        gps: None,
        power_w: 0.0,
        temperatures: Temperatures { external_c: 0.0, pmu_c: 0.0, hdd_c: 0.0 },
        free_disk_bytes: capacity,
    }
}

fn decode_table(signals: &Signals) -> anyhow::Result<DecodeTable> {
    match &signals.decode_table {
        Some(p) => load_decode_table(p),
        None => Ok(default_decode_table()),
    }
}

fn pipeline_config(signals: &Signals) -> anyhow::Result<PipelineConfig> {
    Ok(PipelineConfig { table: decode_table(signals)?, speed_signal: signals.speed_signal.clone() })
}

/// Roster ids per rider: the vehicle of the latest instrumentation and the
/// primary subject of that vehicle.
fn roster_ids(fleet: &FleetConfig) -> BTreeMap<u32, RosterIds> {
    let mut out = BTreeMap::new();
    let mut latest: BTreeMap<u32, (NaiveDate, u32)> = BTreeMap::new();
    for i in &fleet.instrumentations {
        let e = latest.entry(i.rider_id).or_insert((i.start_date, i.vehicle_id));
        if i.start_date >= e.0 {
            *e = (i.start_date, i.vehicle_id);
        }
    }
    for (rider, (_, vehicle)) in latest {
        let primary = fleet
            .participations
            .iter()
            .filter(|p| p.vehicle_id == vehicle && p.role == crate::catalog::Role::Primary)
            .max_by_key(|p| p.start_date);
        out.insert(
            rider,
            RosterIds { vehicle_id: vehicle, subject_id: primary.map(|p| p.subject_id), study_id: primary.map(|p| p.study_id) },
        );
    }
    out
}

fn trip_name(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Serialize)]
struct Outcome {
    trip: String,
    status: String,
    detail: String,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    result: serde_json::Value,
}

impl Outcome {
    fn new(dir: &Path, status: &str, detail: String, result: &impl Serialize) -> Self {
        Outcome {
            trip: trip_name(dir),
            status: status.into(),
            detail,
            result: serde_json::to_value(result).unwrap_or(serde_json::Value::Null),
        }
    }
}

fn run_batch(ctx: &Ctx, batch: &Batch, f: impl Fn(&Path) -> anyhow::Result<Outcome> + Sync) -> anyhow::Result<()> {
    if let Some(trip) = &batch.target.trip {
        let outcome = f(trip)?;
        print!("{}", render_outcomes(std::slice::from_ref(&outcome), ctx.format));
        return Ok(());
    }
    let root = batch.target.root.as_ref().expect("clap requires --trip or --root");
    let dirs = pipeline::trip_dirs(root).with_context(|| root.display().to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(batch.jobs.unwrap_or(0)).build()?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        dirs.par_iter()
            .map(|d| f(d).unwrap_or_else(|e| Outcome::new(d, "error", format!("{e:#}").replace('\n', " "), &())))
            .collect()
    });
    print!("{}", render_outcomes(&outcomes, ctx.format));
    let failed = outcomes.iter().filter(|o| o.status == "error").count();
    if failed > 0 {
        bail!("{failed} of {} trips failed", outcomes.len());
    }
    Ok(())
}

fn csv_line(fields: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 in, utf-8 out")
}

fn render_outcomes(outcomes: &[Outcome], format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(outcomes).expect("serializes") + "\n",
        Format::Csv => {
            let mut s = csv_line(&["trip", "status", "detail"]);
            for o in outcomes {
                s += &csv_line(&[&o.trip, &o.status, &o.detail]);
            }
            s
        }
        Format::Text => {
            let w = outcomes.iter().map(|o| o.trip.len()).max().unwrap_or(0).max(4);
            let mut s = format!("{:<w$}  {:<13}  detail\n", "trip", "status");
            for o in outcomes {
                let _ = writeln!(s, "{:<w$}  {:<13}  {}", o.trip, o.status, o.detail);
            }
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for o in outcomes {
                *counts.entry(o.status.as_str()).or_default() += 1;
            }
            let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{v} {k}")).collect();
            let _ = writeln!(s, "{} trips: {}", outcomes.len(), summary.join(", "));
            s
        }
    }
}

pub fn render_stats(stats: &FleetStats, format: Format) -> String {
    let rows = [
        ("trips", stats.trip_count.to_string()),
        ("miles", format!("{:.3}", stats.miles)),
        ("participant_days", stats.participant_days.to_string()),
        ("frames", stats.frame_count.to_string()),
        ("drivers", stats.driver_count.to_string()),
        ("vehicles", stats.vehicle_count.to_string()),
    ];
    match format {
        Format::Json => serde_json::to_string_pretty(stats).expect("serializes") + "\n",
        Format::Csv => {
            let keys: Vec<&str> = rows.iter().map(|r| r.0).collect();
            let vals: Vec<&str> = rows.iter().map(|r| r.1.as_str()).collect();
            csv_line(&keys) + &csv_line(&vals)
        }
        Format::Text => rows.iter().map(|(k, v)| format!("{k:<18}{v}\n")).collect(),
    }
}
