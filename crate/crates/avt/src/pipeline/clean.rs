//! Repairs an offloaded trip directory in place, backing files up first.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use avt_core::TripId;

use crate::formats::{self, RowError, CAN_HEADER, DIAGNOSTICS_HEADER, FRAME_HEADER, GPS_HEADER, IMU_HEADER};
use crate::layout::{self, TripLayout, BACKUP_DIR};
use crate::scan;

/// Ids the study administration knows for a rider's instrumented vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterIds {
    pub vehicle_id: u32,
    pub subject_id: Option<u32>,
    pub study_id: Option<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct CleanContext {
    pub roster: BTreeMap<u32, RosterIds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fix", rename_all = "snake_case")]
pub enum Fix {
    Permissions { path: String, from: u32, to: u32 },
    ReconstructedSpecs,
    RepairedId { field: String, from: Value, to: u32 },
    RemovedSubsystem { subsystem: String, reason: String },
    TruncatedLine { file: String, bytes: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    MissingEssential { subsystem: String },
    UnreadableConfig { detail: String },
    NoTimestampedRows,
    RejectedRows { file: String, count: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub trip: PathBuf,
    pub backup_dir: PathBuf,
    /// Files copied into the backup directory during this pass.
    pub backups: Vec<String>,
    pub fixes: Vec<Fix>,
    pub findings: Vec<Finding>,
    pub reconstructed: Vec<String>,
    /// False when an essential problem remains; the filter will drop the trip.
    pub recoverable: bool,
}

#[derive(Debug, Error)]
pub enum CleanError {
    #[error("{0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("backup of {file} failed: {source}")]
    BackupFailed { file: String, source: io::Error },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CleanError {
    let context = context.into();
    move |source| CleanError::Io { context, source }
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).display().to_string()
}

const DIR_MODE: u32 = 0o070;
const FILE_MODE: u32 = 0o060;

/// Grants group read/write (and traverse on directories), keeping other bits.
fn normalize_permissions(root: &Path, dir: &Path, fixes: &mut Vec<Fix>) -> Result<(), CleanError> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir.display().to_string()))?
        .collect::<Result<_, _>>()
        .map_err(io_err(dir.display().to_string()))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        let meta = fs::symlink_metadata(&path).map_err(io_err(path.display().to_string()))?;
        let want = if meta.is_dir() {
            DIR_MODE
        } else if meta.is_file() {
            FILE_MODE
        } else {
            continue;
        };
        let mode = meta.permissions().mode() & 0o7777;
        if mode & want != want {
            let to = mode | want;
            fs::set_permissions(&path, fs::Permissions::from_mode(to)).map_err(io_err(path.display().to_string()))?;
            fixes.push(Fix::Permissions { path: rel(root, &path), from: mode, to });
        }
        if meta.is_dir() {
            normalize_permissions(root, &path, fixes)?;
        }
    }
    Ok(())
}

fn grant_group(path: &Path, dir: bool) -> io::Result<()> {
    let mode = fs::metadata(path)?.permissions().mode() & 0o7777;
    let want = if dir { DIR_MODE } else { FILE_MODE };
    if mode & want != want {
        fs::set_permissions(path, fs::Permissions::from_mode(mode | want))?;
    }
    Ok(())
}

fn create_dir_group(path: &Path) -> io::Result<()> {
    if !path.is_dir() {
        fs::create_dir_all(path)?;
    }
    grant_group(path, true)
}

fn write_group(path: &Path, contents: &[u8]) -> io::Result<()> {
    fs::write(path, contents)?;
    grant_group(path, false)
}

/// Text files the cleaner may rewrite; each is copied to the backup
/// directory once, before the first pass mutates anything.
fn mutable_files(layout: &TripLayout) -> Vec<PathBuf> {
    let mut files = vec![layout.dacman(), layout.specs(), layout.can_csv(), layout.gps_csv(), layout.imu_csv(), layout.diagnostics()];
    files.extend(layout.cameras().iter().map(|c| layout.camera_csv(c)));
    files
}

fn take_backups(layout: &TripLayout) -> Result<Vec<String>, CleanError> {
    let root = layout.root();
    let backup = layout.backup_dir();
    let mut taken = Vec::new();
    for src in mutable_files(layout) {
        if !src.is_file() {
            continue;
        }
        let name = rel(root, &src);
        let dst = backup.join(&name);
        if dst.exists() {
            continue;
        }
        let fail = |source| CleanError::BackupFailed { file: name.clone(), source };
        if let Some(parent) = dst.parent() {
            create_dir_group(&backup).map_err(fail)?;
            create_dir_group(parent).map_err(fail)?;
        }
        fs::copy(&src, &dst).map_err(fail)?;
        grant_group(&dst, false).map_err(fail)?;
        taken.push(name);
    }
    Ok(taken)
}

fn as_id(v: Option<&Value>) -> Option<u32> {
    v.and_then(Value::as_u64).and_then(|n| u32::try_from(n).ok()).filter(|&n| n > 0)
}

fn repair_ids(layout: &TripLayout, ctx: &CleanContext, report: &mut CleanReport) -> Result<(), CleanError> {
    let path = layout.dacman();
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_err("reading trip_dacman.json")(e)),
    };
    let mut doc: Value = match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Value::Object(m),
        Ok(_) | Err(_) => {
            report.findings.push(Finding::UnreadableConfig { detail: "trip_dacman.json is not a JSON object".into() });
            return Ok(());
        }
    };
    let Ok(trip_id) = layout.name().parse::<TripId>() else {
        return Ok(());
    };
    let rider = trip_id.rider_id();
    let mut wanted: Vec<(&str, u32, bool)> = vec![("rider_id", rider, true)];
    if let Some(ids) = ctx.roster.get(&rider) {
        wanted.push(("vehicle_id", ids.vehicle_id, true));
        if let Some(s) = ids.subject_id {
            wanted.push(("subject_id", s, false));
        }
        if let Some(s) = ids.study_id {
            wanted.push(("study_id", s, false));
        }
    }
    let mut changed = false;
    let obj = doc.as_object_mut().expect("checked object");
    for (field, value, authoritative) in wanted {
        let current = as_id(obj.get(field));
        let repair = match current {
            None => true,
            Some(c) => authoritative && c != value,
        };
        if repair {
            let from = obj.get(field).cloned().unwrap_or(Value::Null);
            obj.insert(field.to_string(), Value::from(value));
            report.fixes.push(Fix::RepairedId { field: field.to_string(), from, to: value });
            changed = true;
        }
    }
    if changed {
        let mut out = serde_json::to_string_pretty(&doc).expect("json");
        out.push('\n');
        write_group(&path, out.as_bytes()).map_err(io_err("writing trip_dacman.json"))?;
    }
    Ok(())
}

fn nonessential_failure(layout: &TripLayout, subsystem: &str) -> Result<Option<String>, CleanError> {
    let data = layout.data_file(subsystem).expect("known subsystem");
    if !data.exists() {
        return Ok(None);
    }
    let errors = formats::error_file_stats(&layout.error_file(subsystem)).map_err(io_err("reading error file"))?;
    if errors.bytes > 0 {
        return Ok(Some(format!("{subsystem}.error has {} lines", errors.lines)));
    }
    let parsed = match subsystem {
        "gps" => scan::gps_samples(layout).map(|p| p.map(|p| (p.rejected, p.torn_tail))),
        "imu" => scan::imu_samples(layout).map(|p| p.map(|p| (p.rejected, p.torn_tail))),
        _ => return Ok(None),
    };
    match parsed {
        Err(e) => Ok(Some(e.to_string())),
        Ok(Some((rejected, torn))) => {
            // a torn last line alone is repaired, not fatal
            let bad = rejected - u64::from(torn);
            Ok((bad > 1 || (bad == 1 && !last_line_only(layout, subsystem)?)).then(|| format!("{bad} malformed rows")))
        }
        Ok(None) => Ok(None),
    }
}

/// Whether the only rejected row is the final line of the file.
fn last_line_only(layout: &TripLayout, subsystem: &str) -> Result<bool, CleanError> {
    let path = layout.data_file(subsystem).expect("known subsystem");
    let (header, parse) = row_check(subsystem).expect("csv subsystem");
    let bytes = fs::read(&path).map_err(io_err(path.display().to_string()))?;
    let lines = bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count() as u64;
    let parsed = formats::parse_csv(&bytes, "", header, parse).map_err(|e| CleanError::Io {
        context: e.to_string(),
        source: io::Error::from(io::ErrorKind::InvalidData),
    })?;
    Ok(parsed.rejected_lines == vec![lines])
}

type RowCheck = fn(&csv::StringRecord) -> Result<(), RowError>;

fn row_check(subsystem: &str) -> Option<(&'static str, RowCheck)> {
    Some(match subsystem {
        "can" => (CAN_HEADER, |r| formats::parse_can_record(r).map(drop)),
        "gps" => (GPS_HEADER, |r| formats::parse_gps_record(r).map(drop)),
        "imu" => (IMU_HEADER, |r| formats::parse_imu_record(r).map(drop)),
        "diagnostics" => (DIAGNOSTICS_HEADER, |r| formats::parse_diagnostic_record(r).map(drop)),
        _ => (FRAME_HEADER, |r| formats::parse_frame_record(r).map(drop)),
    })
}

fn remove_subsystem(layout: &TripLayout, subsystem: &str, reason: String, report: &mut CleanReport) -> Result<(), CleanError> {
    let removed = layout.backup_dir().join("removed");
    create_dir_group(&layout.backup_dir()).map_err(io_err("creating backup dir"))?;
    create_dir_group(&removed).map_err(io_err("creating backup dir"))?;
    for src in [layout.data_file(subsystem).expect("known"), layout.error_file(subsystem)] {
        if src.exists() {
            let dst = removed.join(src.file_name().expect("file name"));
            fs::rename(&src, &dst).map_err(io_err(format!("moving {}", src.display())))?;
        }
    }
    if let Ok(specs) = formats::read_specs(&layout.specs()) {
        if specs.subsystems.contains_key(subsystem) {
            if let Some(trimmed) = specs.without(subsystem) {
                write_group(&layout.specs(), formats::specs_json(&trimmed).as_bytes()).map_err(io_err("writing specs"))?;
            }
        }
    }
    report.fixes.push(Fix::RemovedSubsystem { subsystem: subsystem.to_string(), reason });
    Ok(())
}

/// Drops an unterminated tail and any unparseable trailing rows.
fn trim_tail(path: &Path, header: &'static str, check: RowCheck) -> Result<u64, CleanError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(io_err(path.display().to_string())(e)),
    };
    let mut keep = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    loop {
        let body = &bytes[..keep];
        let line_start = body[..keep.saturating_sub(1)].iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if line_start == 0 {
            // only the header (or nothing) left
            break;
        }
        let line = &body[line_start..keep];
        let mut probe = format!("{header}\n").into_bytes();
        probe.extend_from_slice(line);
        let ok = formats::parse_csv(&probe, "", header, check).is_ok_and(|p| p.rejected == 0 && !p.rows.is_empty());
        if ok {
            break;
        }
        keep = line_start;
    }
    let cut = bytes.len() - keep;
    if cut > 0 {
        let f = fs::OpenOptions::new().write(true).open(path).map_err(io_err(path.display().to_string()))?;
        f.set_len(keep as u64).map_err(io_err(path.display().to_string()))?;
    }
    Ok(cut as u64)
}

/// Cleans one trip directory. Applies, in order: permission normalization,
/// backups, specs reconstruction, id repair, removal of failed nonessential
/// subsystems and removal of torn trailing lines. A second run on the
/// result applies no fixes.
pub fn clean_trip(dir: &Path, ctx: &CleanContext) -> Result<CleanReport, CleanError> {
    if !dir.is_dir() {
        return Err(CleanError::NotADirectory(dir.to_path_buf()));
    }
    let layout = TripLayout::new(dir);
    let mut report = CleanReport {
        trip: dir.to_path_buf(),
        backup_dir: dir.join(BACKUP_DIR),
        backups: Vec::new(),
        fixes: Vec::new(),
        findings: Vec::new(),
        reconstructed: Vec::new(),
        recoverable: true,
    };

    normalize_permissions(dir, dir, &mut report.fixes)?;
    report.backups = take_backups(&layout)?;

    if formats::read_specs(&layout.specs()).is_err() {
        match scan::specs_from_rows(&layout) {
            Ok(Some(specs)) => {
                write_group(&layout.specs(), formats::specs_json(&specs).as_bytes()).map_err(io_err("writing specs"))?;
                report.fixes.push(Fix::ReconstructedSpecs);
                report.reconstructed.push(layout::SPECS_FILE.to_string());
            }
            Ok(None) => report.findings.push(Finding::NoTimestampedRows),
            Err(e) => report.findings.push(Finding::UnreadableConfig { detail: e.to_string() }),
        }
    }

    repair_ids(&layout, ctx, &mut report)?;

    for sub in ["gps", "imu", "audio"] {
        if let Some(reason) = nonessential_failure(&layout, sub)? {
            remove_subsystem(&layout, sub, reason, &mut report)?;
        }
    }

    let mut csvs: Vec<(PathBuf, &str)> = layout.cameras().into_iter().map(|c| (layout.camera_csv(&c), "camera")).collect();
    csvs.extend([
        (layout.can_csv(), "can"),
        (layout.gps_csv(), "gps"),
        (layout.imu_csv(), "imu"),
        (layout.diagnostics(), "diagnostics"),
    ]);
    for (path, kind) in csvs {
        let (header, check) = row_check(kind).expect("csv");
        let cut = trim_tail(&path, header, check)?;
        if cut > 0 {
            report.fixes.push(Fix::TruncatedLine { file: rel(dir, &path), bytes: cut });
        }
    }

    if let Ok(Some(can)) = scan::can_frames(&layout) {
        if can.rejected > 0 {
            report.findings.push(Finding::RejectedRows { file: layout::CAN_FILE.into(), count: can.rejected });
        }
    }
    if let Ok(lr) = layout::validate_layout(dir) {
        for f in lr.findings {
            if let layout::LayoutFinding::MissingEssential(subsystem) = f {
                report.findings.push(Finding::MissingEssential { subsystem });
                report.recoverable = false;
            }
        }
    }
    if report.findings.iter().any(|f| matches!(f, Finding::NoTimestampedRows | Finding::UnreadableConfig { .. })) {
        report.recoverable = false;
    }
    Ok(report)
}

/// Grants group read/write on everything in a freshly recorded trip.
pub fn share_with_group(dir: &Path) -> io::Result<()> {
    let mut ignored = Vec::new();
    grant_group(dir, true)?;
    normalize_permissions(dir, dir, &mut ignored).map_err(|e| match e {
        CleanError::Io { source, .. } | CleanError::BackupFailed { source, .. } => source,
        CleanError::NotADirectory(_) => io::Error::from(io::ErrorKind::NotFound),
    })
}
