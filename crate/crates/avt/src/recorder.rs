//! Trip recorder: one writer thread per subsystem, one clock, one stop signal.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use avt_core::can::{BusFrame, MalformedFrame};
use avt_core::fsm::{FsmAction, FsmConfig, FsmEvent, PowerController};
use avt_core::sim::{AudioStream, CameraStream, DiagnosticSample, GpsSample, ImuSample, SimBus, SimStreams};
use avt_core::{CanFrame, CanId, Timestamp, TripId, TripSpecs};

use crate::dacman::{ConfigError, DacmanConfig};
use crate::formats::{self, CAN_HEADER, DIAGNOSTICS_HEADER, FRAME_HEADER, GPS_HEADER, IMU_HEADER};
use crate::layout::TripLayout;
use crate::scan;

/// Failures a writer survives before its subsystem is stopped.
pub const RESTART_BUDGET: u8 = 2;

const LOCK_FILE: &str = ".recording";

/// Shared stop request: samples stamped after the cutoff are not recorded.
#[derive(Debug, Clone)]
pub struct StopSignal(Arc<AtomicU64>);

impl Default for StopSignal {
    fn default() -> Self {
        StopSignal(Arc::new(AtomicU64::new(u64::MAX)))
    }
}

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn at(ts: Timestamp) -> Self {
        let s = Self::new();
        s.trigger(ts);
        s
    }

    /// Requests a stop at `ts`. An earlier request wins.
    pub fn trigger(&self, ts: Timestamp) {
        self.0.fetch_min(ts.as_micros(), Ordering::SeqCst);
    }

    pub fn cutoff(&self) -> Option<Timestamp> {
        match self.0.load(Ordering::SeqCst) {
            u64::MAX => None,
            t => Some(Timestamp::from_micros(t)),
        }
    }

    fn stops(&self, ts: Timestamp) -> bool {
        ts.as_micros() > self.0.load(Ordering::SeqCst)
    }
}

/// Time at which the power controller would signal shutdown for this bus
/// traffic, if the vehicle ever woke it.
pub fn shutdown_time(can: &[CanFrame], wake_id: CanId) -> Option<Timestamp> {
    let mut pc = PowerController::new(FsmConfig::new(wake_id));
    let mut actions = Vec::new();
    for f in can {
        actions.extend(pc.handle(FsmEvent::FrameSeen { id: f.id, ts: f.ts }).ok()?);
    }
    if let Some(deadline) = pc.state().next_deadline(pc.config()) {
        actions.extend(pc.advance_to(deadline).ok()?);
    }
    actions.into_iter().find(|a| a.action == FsmAction::SignalShutdown).map(|a| a.ts)
}

/// Maps the streams' clock onto the trip clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripClock {
    pub offset_us: i64,
}

impl TripClock {
    pub fn stamp(&self, ts: Timestamp) -> Timestamp {
        let t = ts.as_micros() as i128 + self.offset_us as i128;
        Timestamp::from_micros(t.clamp(0, u64::MAX as i128) as u64)
    }
}

/// Writer failures to inject, keyed by subsystem name. Each listed sample
/// index fails once when the writer reaches it.
#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    failures: BTreeMap<String, Vec<usize>>,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn fail_at(mut self, subsystem: &str, sample: usize, times: usize) -> Self {
        self.failures.entry(subsystem.to_string()).or_default().extend(std::iter::repeat_n(sample, times));
        self
    }

    fn for_subsystem(&self, subsystem: &str) -> Vec<usize> {
        self.failures.get(subsystem).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum WriterState {
    Running,
    Stopped { restarts: u8 },
    Failed { restarts: u8 },
    DiskFull { restarts: u8 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SubsystemReport {
    pub name: String,
    pub state: WriterState,
    pub rows: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct RecorderStatus {
    pub subsystems: BTreeMap<String, SubsystemReport>,
}

#[derive(Debug, Clone)]
pub struct RecordOutcome {
    pub trip_id: TripId,
    pub layout: TripLayout,
    pub status: RecorderStatus,
    pub specs: Option<TripSpecs>,
}

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("streams do not match config: {0}")]
    StreamMismatch(String),
    #[error("nothing to record before the stop signal")]
    NoData,
    #[error("trip directory {0} already exists")]
    TripExists(PathBuf),
    #[error("trip directory {0} is already open")]
    AlreadyOpen(PathBuf),
    #[error("disk full while recording {}", .0.layout.root().display())]
    DiskFull(Box<RecordOutcome>),
    #[error("subsystem {kind} failed after {RESTART_BUDGET} restarts")]
    SubsystemFailed { kind: String, outcome: Box<RecordOutcome> },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error(transparent)]
    Format(#[from] formats::FormatError),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RecorderError {
    let context = context.into();
    move |source| RecorderError::Io { context, source }
}

#[derive(Debug, Clone)]
pub struct RecorderOptions {
    /// Directory the trip directory is created in.
    pub out_root: PathBuf,
    pub stop: StopSignal,
    pub clock: TripClock,
    pub faults: FaultPlan,
    /// Bytes the writers may put on the drive in total.
    pub disk_capacity_bytes: Option<u64>,
}

impl RecorderOptions {
    pub fn new(out_root: impl Into<PathBuf>) -> Self {
        RecorderOptions {
            out_root: out_root.into(),
            stop: StopSignal::new(),
            clock: TripClock::default(),
            faults: FaultPlan::none(),
            disk_capacity_bytes: None,
        }
    }
}

/// Exclusive claim on a trip directory while it is being recorded.
#[derive(Debug)]
pub struct TripHandle {
    pub id: TripId,
    pub layout: TripLayout,
    pub clock: TripClock,
    lock: PathBuf,
}

impl TripHandle {
    pub fn open(id: TripId, layout: TripLayout, clock: TripClock) -> Result<Self, RecorderError> {
        let lock = layout.root().join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(TripHandle { id, layout, clock, lock }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                Err(RecorderError::AlreadyOpen(layout.root().to_path_buf()))
            }
            Err(e) => Err(io_err(lock.display().to_string())(e)),
        }
    }
}

impl Drop for TripHandle {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

struct DiskQuota(AtomicU64);

impl DiskQuota {
    fn reserve(&self, n: u64) -> bool {
        self.0.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |left| left.checked_sub(n)).is_ok()
    }
}

/// `trip_diagnostics.log`, shared by every writer.
struct DiagnosticsLog {
    file: Mutex<BufWriter<File>>,
}

impl DiagnosticsLog {
    fn create(path: &Path) -> io::Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "{DIAGNOSTICS_HEADER}")?;
        Ok(DiagnosticsLog { file: Mutex::new(file) })
    }

    fn event(&self, ts: Timestamp, key: &str, value: &str) {
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        let _ = writeln!(f, "{ts},{key},{value}");
    }

    fn lines(&self, quota: &DiskQuota, lines: &[String]) -> bool {
        let bytes: String = lines.iter().map(|l| format!("{l}\n")).collect();
        if !quota.reserve(bytes.len() as u64) {
            return false;
        }
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(bytes.as_bytes()).is_ok()
    }

    fn finish(self) -> io::Result<()> {
        self.file.into_inner().unwrap_or_else(|p| p.into_inner()).flush()
    }
}

/// One output file of a writer.
struct OutputSpec {
    path: PathBuf,
    preamble: Vec<u8>,
}

/// What a writer records: a sequence of samples, each rendered to bytes for
/// each of the writer's outputs.
trait Source: Sync {
    fn len(&self) -> usize;
    fn ts(&self, i: usize) -> Timestamp;
    /// Fills one buffer per output; returns whether the sample is a data row.
    fn render(&self, i: usize, cutoff: Option<Timestamp>, out: &mut [Vec<u8>]) -> bool;
}

struct Writer<'a> {
    name: String,
    outputs: Vec<OutputSpec>,
    error_path: PathBuf,
    source: &'a dyn Source,
}

struct Shared<'a> {
    stop: &'a StopSignal,
    quota: &'a DiskQuota,
    diagnostics: &'a DiagnosticsLog,
    faults: &'a FaultPlan,
}

enum Failure {
    DiskFull,
    Io(String),
}

fn open_outputs(outputs: &[OutputSpec], append: bool) -> io::Result<Vec<BufWriter<File>>> {
    outputs
        .iter()
        .map(|o| {
            let mut opts = OpenOptions::new();
            if append {
                opts.append(true);
            } else {
                opts.write(true).create(true).truncate(true);
            }
            let mut f = BufWriter::new(opts.open(&o.path)?);
            if !append {
                f.write_all(&o.preamble)?;
            }
            Ok(f)
        })
        .collect()
}

fn append_line(path: &Path, line: &str) {
    if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
        let _ = writeln!(f, "{line}");
    }
}

impl Writer<'_> {
    fn run(self, shared: &Shared<'_>) -> SubsystemReport {
        let mut pending_faults = shared.faults.for_subsystem(&self.name);
        let mut restarts = 0u8;
        let mut rows = 0u64;
        let mut rejected = 0u64;
        let mut bufs: Vec<Vec<u8>> = vec![Vec::new(); self.outputs.len()];
        let mut files = open_outputs(&self.outputs, false).map_err(|e| e.to_string());
        let mut i = 0;
        let state = loop {
            if i >= self.source.len() {
                break WriterState::Stopped { restarts };
            }
            let ts = self.source.ts(i);
            if shared.stop.stops(ts) {
                break WriterState::Stopped { restarts };
            }
            let attempt = match &mut files {
                Err(e) => Err(Failure::Io(e.clone())),
                Ok(files) => {
                    if let Some(pos) = pending_faults.iter().position(|&f| f == i) {
                        pending_faults.swap_remove(pos);
                        Err(Failure::Io(format!("injected fault at sample {i}")))
                    } else {
                        bufs.iter_mut().for_each(Vec::clear);
                        let is_row = self.source.render(i, shared.stop.cutoff(), &mut bufs);
                        let total: usize = bufs.iter().map(Vec::len).sum();
                        if !shared.quota.reserve(total as u64) {
                            Err(Failure::DiskFull)
                        } else {
                            files
                                .iter_mut()
                                .zip(&bufs)
                                .filter(|(_, b)| !b.is_empty())
                                .try_for_each(|(f, b)| f.write_all(b))
                                .map(|()| is_row)
                                .map_err(|e| Failure::Io(e.to_string()))
                        }
                    }
                }
            };
            match attempt {
                Ok(true) => {
                    rows += 1;
                    i += 1;
                }
                Ok(false) => {
                    rejected += 1;
                    i += 1;
                }
                Err(Failure::DiskFull) => {
                    append_line(&self.error_path, &format!("{ts} disk full, writer stopped"));
                    shared.diagnostics.event(ts, "disk_full", &self.name);
                    break WriterState::DiskFull { restarts };
                }
                Err(Failure::Io(msg)) => {
                    if let Ok(files) = &mut files {
                        files.iter_mut().for_each(|f| {
                            let _ = f.flush();
                        });
                    }
                    if restarts >= RESTART_BUDGET {
                        append_line(
                            &self.error_path,
                            &format!("{ts} failure {}: {msg}; restart budget exhausted, subsystem stopped", restarts + 1),
                        );
                        shared.diagnostics.event(ts, "subsystem_failed", &self.name);
                        break WriterState::Failed { restarts };
                    }
                    restarts += 1;
                    append_line(&self.error_path, &format!("{ts} failure {restarts}: {msg}; restarting"));
                    shared.diagnostics.event(ts, "subsystem_restart", &self.name);
                    files = open_outputs(&self.outputs, true).map_err(|e| e.to_string());
                }
            }
        };
        if let Ok(files) = &mut files {
            for f in files.iter_mut() {
                let _ = f.flush();
            }
        }
        SubsystemReport { name: self.name, state, rows, rejected }
    }
}

struct CameraSource<'a> {
    stream: &'a CameraStream,
    clock: TripClock,
}

impl Source for CameraSource<'_> {
    fn len(&self) -> usize {
        self.stream.frames.len()
    }
    fn ts(&self, i: usize) -> Timestamp {
        self.clock.stamp(self.stream.frames[i])
    }
    fn render(&self, i: usize, _: Option<Timestamp>, out: &mut [Vec<u8>]) -> bool {
        out[0].extend(formats::container_record(&self.stream.payload(i)));
        out[1].extend(formats::frame_row(i as u64, self.ts(i)).as_bytes());
        out[1].push(b'\n');
        true
    }
}

struct CanSource {
    frames: Vec<BusFrame>,
    clock: TripClock,
}

fn malformed_line(ts: Timestamp, frame: &BusFrame, why: &MalformedFrame) -> String {
    format!("{ts} skipped frame id {:x} dlc {} ({} bytes): {why}", frame.id, frame.dlc, frame.data.len())
}

impl Source for CanSource {
    fn len(&self) -> usize {
        self.frames.len()
    }
    fn ts(&self, i: usize) -> Timestamp {
        self.clock.stamp(self.frames[i].ts)
    }
    fn render(&self, i: usize, _: Option<Timestamp>, out: &mut [Vec<u8>]) -> bool {
        let mut frame = self.frames[i].clone();
        frame.ts = self.ts(i);
        match formats::bus_frame_row(&frame) {
            Ok(row) => {
                out[0].extend(row.as_bytes());
                out[0].push(b'\n');
                true
            }
            Err(why) => {
                out[1].extend(malformed_line(frame.ts, &frame, &why).as_bytes());
                out[1].push(b'\n');
                false
            }
        }
    }
}

struct RowSource<'a, T> {
    samples: &'a [T],
    ts: fn(&T) -> Timestamp,
    row: fn(&T) -> String,
    clock: TripClock,
    restamp: fn(&T, Timestamp) -> T,
}

impl<T: Sync> Source for RowSource<'_, T> {
    fn len(&self) -> usize {
        self.samples.len()
    }
    fn ts(&self, i: usize) -> Timestamp {
        self.clock.stamp((self.ts)(&self.samples[i]))
    }
    fn render(&self, i: usize, _: Option<Timestamp>, out: &mut [Vec<u8>]) -> bool {
        let s = (self.restamp)(&self.samples[i], self.ts(i));
        out[0].extend((self.row)(&s).as_bytes());
        out[0].push(b'\n');
        true
    }
}

/// Audio in one-second chunks.
struct AudioSource<'a> {
    audio: &'a AudioStream,
    clock: TripClock,
}

const AUDIO_CHUNK_US: u64 = 1_000_000;

impl AudioSource<'_> {
    fn chunk_start(&self, i: usize) -> Timestamp {
        self.audio.start.saturating_add_micros(i as u64 * AUDIO_CHUNK_US)
    }
}

impl Source for AudioSource<'_> {
    fn len(&self) -> usize {
        self.audio.end.micros_since(self.audio.start).div_ceil(AUDIO_CHUNK_US) as usize
    }
    fn ts(&self, i: usize) -> Timestamp {
        self.clock.stamp(self.chunk_start(i))
    }
    fn render(&self, i: usize, cutoff: Option<Timestamp>, out: &mut [Vec<u8>]) -> bool {
        let from = self.chunk_start(i);
        let mut to = from.saturating_add_micros(AUDIO_CHUNK_US).min(self.audio.end);
        if let Some(c) = cutoff {
            // cutoff is on the trip clock
            let c_stream = Timestamp::from_micros((c.as_micros() as i128 - self.clock.offset_us as i128).max(0) as u64);
            to = to.min(c_stream.saturating_add_micros(1));
        }
        out[0].extend(self.audio.bytes_between(from, to));
        true
    }
}

fn restamp_gps(s: &GpsSample, ts: Timestamp) -> GpsSample {
    GpsSample { ts, ..*s }
}
fn restamp_imu(s: &ImuSample, ts: Timestamp) -> ImuSample {
    ImuSample { ts, ..*s }
}

fn record_diagnostics(samples: &[DiagnosticSample], clock: TripClock, shared: &Shared<'_>) -> SubsystemReport {
    let mut rows = 0;
    let mut state = WriterState::Stopped { restarts: 0 };
    for s in samples {
        let ts = clock.stamp(s.ts);
        if shared.stop.stops(ts) {
            break;
        }
        let stamped = DiagnosticSample { ts, ..*s };
        if !shared.diagnostics.lines(shared.quota, &formats::diagnostic_rows(&stamped)) {
            state = WriterState::DiskFull { restarts: 0 };
            break;
        }
        rows += 1;
    }
    SubsystemReport { name: "diagnostics".into(), state, rows, rejected: 0 }
}

fn first_ts(streams: &SimStreams, bus: &[BusFrame], clock: TripClock, stop: &StopSignal) -> Option<Timestamp> {
    let valid_can = bus.iter().filter(|f| CanFrame::try_from((*f).clone()).is_ok()).map(|f| f.ts);
    streams
        .cameras
        .iter()
        .filter_map(|c| c.frames.first().copied())
        .chain(valid_can)
        .chain(streams.gps.iter().map(|s| s.ts))
        .chain(streams.imu.iter().map(|s| s.ts))
        .map(|t| clock.stamp(t))
        .filter(|&t| !stop.stops(t))
        .min()
}

/// Records the streams into a new trip directory under `opts.out_root`.
///
/// CAN traffic is taken from the vehicle's frames through a listen-only tap;
/// `bus` lets callers attach the recorder to their own simulated bus.
pub fn run_recorder(
    config: &DacmanConfig,
    streams: &SimStreams,
    opts: &RecorderOptions,
) -> Result<RecordOutcome, RecorderError> {
    let bus = SimBus::from_vehicle(&streams.can);
    run_recorder_on_bus(config, streams, &bus, opts)
}

pub fn run_recorder_on_bus(
    config: &DacmanConfig,
    streams: &SimStreams,
    bus: &SimBus,
    opts: &RecorderOptions,
) -> Result<RecordOutcome, RecorderError> {
    config.validate()?;
    let configured: Vec<&str> = config.camera_names().collect();
    for cam in &streams.cameras {
        if !configured.contains(&cam.name.as_str()) {
            return Err(RecorderError::StreamMismatch(format!("camera stream {} is not configured", cam.name)));
        }
    }
    let cameras: Vec<&CameraStream> = configured
        .iter()
        .map(|name| {
            streams
                .cameras
                .iter()
                .find(|c| c.name == *name)
                .ok_or_else(|| RecorderError::StreamMismatch(format!("no stream for camera {name}")))
        })
        .collect::<Result<_, _>>()?;

    let bus_frames: Vec<BusFrame> = bus.listen_only().collect();
    let clock = opts.clock;
    let start = first_ts(streams, &bus_frames, clock, &opts.stop).ok_or(RecorderError::NoData)?;
    let trip_id = TripId::new(config.rider_id, start).map_err(|e| RecorderError::StreamMismatch(e.to_string()))?;

    fs::create_dir_all(&opts.out_root).map_err(io_err(opts.out_root.display().to_string()))?;
    let layout = TripLayout::new(opts.out_root.join(trip_id.to_string()));
    match fs::create_dir(layout.root()) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
            return Err(RecorderError::TripExists(layout.root().to_path_buf()))
        }
        Err(e) => return Err(io_err(layout.root().display().to_string())(e)),
    }
    let handle = TripHandle::open(trip_id, layout.clone(), clock)?;
    fs::write(layout.dacman(), config.to_json()).map_err(io_err("writing trip_dacman.json"))?;
    for cam in &configured {
        fs::create_dir(layout.camera_dir(cam)).map_err(io_err(format!("creating camera dir {cam}")))?;
        File::create(layout.camera_error(cam)).map_err(io_err("creating error file"))?;
    }
    for sub in ["can", "gps", "imu", "audio"] {
        File::create(layout.error_file(sub)).map_err(io_err("creating error file"))?;
    }

    let quota = DiskQuota(AtomicU64::new(opts.disk_capacity_bytes.unwrap_or(u64::MAX)));
    let diagnostics = DiagnosticsLog::create(&layout.diagnostics()).map_err(io_err("creating diagnostics log"))?;
    let shared = Shared { stop: &opts.stop, quota: &quota, diagnostics: &diagnostics, faults: &opts.faults };

    let camera_sources: Vec<CameraSource> = cameras.iter().map(|s| CameraSource { stream: s, clock }).collect();
    let can_source = CanSource { frames: bus_frames, clock };
    let gps_source = RowSource {
        samples: &streams.gps,
        ts: |s: &GpsSample| s.ts,
        row: formats::gps_row,
        clock,
        restamp: restamp_gps,
    };
    let imu_source = RowSource {
        samples: &streams.imu,
        ts: |s: &ImuSample| s.ts,
        row: formats::imu_row,
        clock,
        restamp: restamp_imu,
    };
    let audio_source = AudioSource { audio: &streams.audio, clock };

    let line = |s: &str| format!("{s}\n").into_bytes();
    let mut writers: Vec<Writer> = camera_sources
        .iter()
        .map(|src| {
            let cam = src.stream.name.as_str();
            let mut container = Vec::new();
            formats::write_container_header(&mut container).expect("vec write");
            Writer {
                name: cam.to_string(),
                outputs: vec![
                    OutputSpec { path: layout.camera_video(cam), preamble: container },
                    OutputSpec { path: layout.camera_csv(cam), preamble: line(FRAME_HEADER) },
                ],
                error_path: layout.camera_error(cam),
                source: src,
            }
        })
        .collect();
    writers.push(Writer {
        name: "can".into(),
        outputs: vec![
            OutputSpec { path: layout.can_csv(), preamble: line(CAN_HEADER) },
            OutputSpec { path: layout.error_file("can"), preamble: Vec::new() },
        ],
        error_path: layout.error_file("can"),
        source: &can_source,
    });
    writers.push(Writer {
        name: "gps".into(),
        outputs: vec![OutputSpec { path: layout.gps_csv(), preamble: line(GPS_HEADER) }],
        error_path: layout.error_file("gps"),
        source: &gps_source,
    });
    writers.push(Writer {
        name: "imu".into(),
        outputs: vec![OutputSpec { path: layout.imu_csv(), preamble: line(IMU_HEADER) }],
        error_path: layout.error_file("imu"),
        source: &imu_source,
    });
    writers.push(Writer {
        name: "audio".into(),
        outputs: vec![OutputSpec { path: layout.audio_raw(), preamble: Vec::new() }],
        error_path: layout.error_file("audio"),
        source: &audio_source,
    });

    let mut reports: Vec<SubsystemReport> = thread::scope(|scope| {
        let handles: Vec<_> = writers.into_iter().map(|w| scope.spawn(|| w.run(&shared))).collect();
        let diag = scope.spawn(|| record_diagnostics(&streams.diagnostics, clock, &shared));
        let mut out: Vec<SubsystemReport> = handles.into_iter().map(|h| h.join().expect("writer thread")).collect();
        out.push(diag.join().expect("diagnostics thread"));
        out
    });
    diagnostics.finish().map_err(io_err("flushing diagnostics log"))?;

    let specs = finalize_trip(&layout)?;
    drop(handle);
    crate::pipeline::clean::share_with_group(layout.root()).map_err(io_err("setting permissions"))?;

    let status = RecorderStatus { subsystems: reports.drain(..).map(|r| (r.name.clone(), r)).collect() };
    let outcome = RecordOutcome { trip_id, layout, status, specs };
    let disk_full = outcome.status.subsystems.values().any(|r| matches!(r.state, WriterState::DiskFull { .. }));
    if disk_full {
        return Err(RecorderError::DiskFull(Box::new(outcome)));
    }
    let failed = outcome
        .status
        .subsystems
        .values()
        .find(|r| matches!(r.state, WriterState::Failed { .. }))
        .map(|r| r.name.clone());
    match failed {
        Some(kind) => Err(RecorderError::SubsystemFailed { kind, outcome: Box::new(outcome) }),
        None => Ok(outcome),
    }
}

/// Writes `trip_specs.json` from the rows on disk. Running it again on a
/// finalized trip rewrites identical bytes.
pub fn finalize_trip(layout: &TripLayout) -> Result<Option<TripSpecs>, RecorderError> {
    let specs = scan::specs_from_rows(layout)?;
    if let Some(specs) = &specs {
        let text = formats::specs_json(specs);
        if fs::read_to_string(layout.specs()).ok().as_deref() != Some(text.as_str()) {
            fs::write(layout.specs(), text).map_err(io_err("writing trip_specs.json"))?;
        }
    }
    Ok(specs)
}

#[derive(Debug, Error)]
pub enum CanSinkError {
    #[error("sink closed")]
    SinkClosed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Destination for logged CAN traffic: the raw CSV and its error file.
pub struct CanSink<W: Write, E: Write> {
    inner: Option<(W, E)>,
}

impl<W: Write, E: Write> CanSink<W, E> {
    pub fn new(mut data: W, errors: E) -> io::Result<Self> {
        writeln!(data, "{CAN_HEADER}")?;
        Ok(CanSink { inner: Some((data, errors)) })
    }

    pub fn close(&mut self) -> Option<(W, E)> {
        self.inner.take().map(|(mut d, mut e)| {
            let _ = d.flush();
            let _ = e.flush();
            (d, e)
        })
    }
}

/// Appends one row per well-formed frame in arrival order; malformed frames
/// are skipped with a line in the error file. The input is receive-only
/// traffic and nothing here can put a frame on a bus.
pub fn record_can_listen_only<W: Write, E: Write>(
    frames: impl IntoIterator<Item = BusFrame>,
    sink: &mut CanSink<W, E>,
) -> Result<u64, CanSinkError> {
    let (data, errors) = sink.inner.as_mut().ok_or(CanSinkError::SinkClosed)?;
    let mut rows = 0;
    for frame in frames {
        match formats::bus_frame_row(&frame) {
            Ok(row) => {
                writeln!(data, "{row}")?;
                rows += 1;
            }
            Err(why) => writeln!(errors, "{}", malformed_line(frame.ts, &frame, &why))?,
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use avt_core::sim::{simulate, Origin, SimScenario};

    fn run(frames: Vec<BusFrame>) -> (String, String, u64) {
        let mut sink = CanSink::new(Vec::new(), Vec::new()).unwrap();
        let n = record_can_listen_only(frames, &mut sink).unwrap();
        let (d, e) = sink.close().unwrap();
        (String::from_utf8(d).unwrap(), String::from_utf8(e).unwrap(), n)
    }

    #[test]
    fn listen_only_row_format() {
        let frame = BusFrame { ts: 100.into(), id: 0x155, dlc: 8, data: vec![0x10, 0x27, 0, 0, 0, 0, 0, 0] };
        let (data, errors, n) = run(vec![frame]);
        assert_eq!(data, format!("{CAN_HEADER}\n100,155,8,1027000000000000\n"));
        assert_eq!((errors.as_str(), n), ("", 1));
    }

    #[test]
    fn empty_stream() {
        let (data, errors, n) = run(Vec::new());
        assert_eq!(data, format!("{CAN_HEADER}\n"));
        assert_eq!((errors.as_str(), n), ("", 0));
    }

    #[test]
    fn malformed_frame_is_skipped_and_logged() {
        let good = BusFrame { ts: 1.into(), id: 0x25, dlc: 2, data: vec![1, 2] };
        let bad = BusFrame { ts: 2.into(), id: 0x25, dlc: 3, data: vec![1, 2] };
        let (data, errors, n) = run(vec![good.clone(), bad, good]);
        assert_eq!(n, 2);
        assert_eq!(data.lines().count(), 3);
        assert_eq!(errors.lines().count(), 1);
    }

    #[test]
    fn closed_sink() {
        let mut sink = CanSink::new(Vec::new(), Vec::new()).unwrap();
        sink.close();
        assert!(matches!(record_can_listen_only(Vec::new(), &mut sink), Err(CanSinkError::SinkClosed)));
    }

    #[test]
    fn stop_signal_keeps_earliest_request() {
        let s = StopSignal::new();
        assert_eq!(s.cutoff(), None);
        s.trigger(50.into());
        s.trigger(80.into());
        assert_eq!(s.cutoff(), Some(50.into()));
        assert!(s.stops(51.into()));
        assert!(!s.stops(50.into()));
    }

    #[test]
    fn shutdown_follows_last_wake_frame() {
        let mut sc = SimScenario::constant_speed(1, Timestamp::from_micros(1_500_000_000_000_000), 20.0, 5.0, &["a"]);
        sc.sleep_at_s = 12.0;
        let streams = simulate(&sc).unwrap();
        let wake = CanId::new(0x3e9).unwrap();
        let last_wake = streams.can.iter().filter(|f| f.id == wake).map(|f| f.ts).max().unwrap();
        assert_eq!(shutdown_time(&streams.can, wake), Some(last_wake.saturating_add_micros(3_000_000)));
        assert_eq!(shutdown_time(&[], wake), None);
    }

    #[test]
    fn clock_offset_applies_to_every_stream() {
        let dir = tempfile::tempdir().unwrap();
        let sc = SimScenario::constant_speed(3, Timestamp::from_micros(1_500_000_000_000_000), 3.0, 5.0, &["face"]);
        let streams = simulate(&sc).unwrap();
        let cfg = DacmanConfig::new(4, 1, 1, 1, &["face"]);
        let mut opts = RecorderOptions::new(dir.path());
        opts.clock = TripClock { offset_us: 1_000 };
        let out = run_recorder(&cfg, &streams, &opts).unwrap();
        let first_frame = streams.cameras[0].frames[0].as_micros() + 1_000;
        let gps = scan::gps_samples(&out.layout).unwrap().unwrap();
        assert_eq!(gps.rows[0].ts.as_micros(), streams.gps[0].ts.as_micros() + 1_000);
        let frames = scan::camera_frames(&out.layout, "face").unwrap().unwrap();
        assert_eq!(frames.rows[0].ts.as_micros(), first_frame);
        assert!(!out.layout.root().join(LOCK_FILE).exists());
    }

    #[test]
    fn second_handle_on_same_directory_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let id: TripId = "20_20160726_1469546998634990".parse().unwrap();
        let layout = TripLayout::new(dir.path());
        let first = TripHandle::open(id, layout.clone(), TripClock::default()).unwrap();
        assert!(matches!(
            TripHandle::open(id, layout.clone(), TripClock::default()),
            Err(RecorderError::AlreadyOpen(_))
        ));
        drop(first);
        TripHandle::open(id, layout, TripClock::default()).unwrap();
    }

    #[test]
    fn logger_never_transmits() {
        let dir = tempfile::tempdir().unwrap();
        let sc = SimScenario::constant_speed(5, Timestamp::from_micros(1_500_000_000_000_000), 2.0, 5.0, &["face"]);
        let streams = simulate(&sc).unwrap();
        let mut bus = SimBus::from_vehicle(&streams.can);
        let cfg = DacmanConfig::new(4, 1, 1, 1, &["face"]);
        run_recorder_on_bus(&cfg, &streams, &bus, &RecorderOptions::new(dir.path())).unwrap();
        assert_eq!(bus.foreign_frame_count(), 0);
        // the bus does see other nodes, so the count above is meaningful
        bus.transmit(Origin::Node(9), BusFrame { ts: 0.into(), id: 1, dlc: 0, data: vec![] });
        assert_eq!(bus.foreign_frame_count(), 1);
    }
}
