//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use avt_core::can::ByteOrder;
use avt_core::sim::{simulate, SimScenario, SimStreams};
use avt_core::{CanId, SignalSpec, Timestamp};

use avt::catalog::{FleetConfig, Instrumentation, Participation, Rider, Role, Vehicle};
use avt::dacman::DacmanConfig;
use avt::recorder::{run_recorder, shutdown_time, RecordOutcome, RecorderOptions, StopSignal};

/// 2016-06-01T09:00:00Z.
pub const START_US: u64 = 1_464_771_600_000_000;
pub const DAY_US: u64 = 86_400_000_000;
pub const WAKE_ID: u32 = 0x3e9;

pub fn scenario(seed: u64, start_us: u64, duration_s: f64, speed_mps: f64, cameras: &[&str]) -> SimScenario {
    SimScenario::constant_speed(seed, Timestamp::from_micros(start_us), duration_s, speed_mps, cameras)
}

pub fn record_streams(streams: &SimStreams, cfg: &DacmanConfig, out: &Path) -> RecordOutcome {
    let mut opts = RecorderOptions::new(out);
    if let Some(ts) = shutdown_time(&streams.can, CanId::new(WAKE_ID).unwrap()) {
        opts.stop = StopSignal::at(ts);
    }
    run_recorder(cfg, streams, &opts).expect("recording succeeds")
}

pub fn record(s: &SimScenario, cfg: &DacmanConfig, out: &Path) -> RecordOutcome {
    record_streams(&simulate(s).expect("valid scenario"), cfg, out)
}

pub fn dacman(rider: u32, subject: u32, vehicle: u32, cameras: &[&str]) -> DacmanConfig {
    DacmanConfig::new(rider, subject, vehicle, 1, cameras)
}

/// One rider per vehicle, subject = vehicle + 100, all in study 1.
pub fn fleet(vehicles: &[(u32, u32)]) -> FleetConfig {
    let date = "2016-01-01".parse().unwrap();
    let mut f = FleetConfig::default();
    for &(rider, vehicle) in vehicles {
        f.riders.push(Rider { rider_id: rider, notes: String::new(), address: String::new() });
        f.vehicles.push(Vehicle {
            vehicle_id: vehicle,
            make: "Tesla".into(),
            model: "Model S".into(),
            year: Some(2016),
            color: String::new(),
            technologies: vec!["autopilot".into()],
        });
        f.instrumentations.push(Instrumentation { rider_id: rider, vehicle_id: vehicle, start_date: date, end_date: None });
        f.participations.push(Participation {
            subject_id: vehicle + 100,
            study_id: 1,
            vehicle_id: vehicle,
            role: Role::Primary,
            start_date: date,
            end_date: None,
        });
    }
    f
}

// ---- file oracles: plain string handling, no crate parsers ----

/// Newline-terminated data lines after the header, split on commas.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap_or_default();
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete.lines().skip(1).map(|l| l.split(',').map(|f| f.trim().to_string()).collect()).collect()
}

pub fn csv_header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

pub fn first_column_u64(path: &Path) -> Vec<u64> {
    csv_rows(path).iter().map(|r| r[0].parse().unwrap()).collect()
}

pub fn min_max(values: &[u64]) -> Option<(u64, u64)> {
    Some((*values.iter().min()?, *values.iter().max()?))
}

/// Counts complete records: marker byte, then u32-LE length + payload each.
pub fn container_frames(path: &Path) -> u64 {
    let bytes = fs::read(path).unwrap();
    assert_eq!(bytes.first(), Some(&0xAF));
    let mut at = 1usize;
    let mut n = 0;
    while at + 4 <= bytes.len() {
        let len = u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize;
        if at + 4 + len > bytes.len() {
            break;
        }
        at += 4 + len;
        n += 1;
    }
    n
}

/// Camera name to (frame ts list) read from `<cam>/<cam>.csv`.
pub fn camera_ts(trip: &Path, cameras: &[String]) -> Vec<Vec<u64>> {
    cameras
        .iter()
        .map(|c| csv_rows(&trip.join(c).join(format!("{c}.csv"))).iter().map(|r| r[1].parse().unwrap()).collect())
        .collect()
}

pub fn hex_bytes(s: &str) -> Vec<u8> {
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

/// (ts, id, payload) from data_can.csv.
pub fn can_rows(trip: &Path) -> Vec<(u64, u32, Vec<u8>)> {
    csv_rows(&trip.join("data_can.csv"))
        .iter()
        .map(|r| (r[0].parse().unwrap(), u32::from_str_radix(&r[1], 16).unwrap(), hex_bytes(&r[3])))
        .collect()
}

// ---- CAN bit oracle ----

/// Walks the signal bit by bit. Little endian: LSB at `start_bit`, bits
/// ascend. Big endian: MSB at `start_bit` (bit 7 of a byte is its MSB),
/// continuing to bit 7 of the next byte after bit 0.
pub fn oracle_raw(payload: &[u8], start_bit: u32, len: u32, big_endian: bool) -> u64 {
    let bit = |pos: u32| -> u64 { ((payload[(pos / 8) as usize] >> (pos % 8)) & 1) as u64 };
    let mut raw = 0u64;
    if big_endian {
        let mut pos = start_bit;
        for _ in 0..len {
            raw = (raw << 1) | bit(pos);
            pos = if pos % 8 == 0 { pos + 15 } else { pos - 1 };
        }
    } else {
        for i in 0..len {
            raw |= bit(start_bit + i) << i;
        }
    }
    raw
}

pub fn oracle_value(payload: &[u8], spec: &SignalSpec) -> f64 {
    let len = spec.bit_length as u32;
    let raw = oracle_raw(payload, spec.start_bit as u32, len, spec.byte_order == ByteOrder::Big);
    let n = if spec.signed && len < 64 && raw >> (len - 1) & 1 == 1 {
        (raw as i128 - (1i128 << len)) as f64
    } else if spec.signed {
        raw as i64 as f64
    } else {
        raw as f64
    };
    n * spec.scale + spec.offset
}

// ---- sync oracle ----

pub struct OracleSync {
    pub slots: Vec<u64>,
    /// Per camera, per slot: frame index (0-based row number).
    pub frames: Vec<Vec<u64>>,
    /// Per signal name, per slot.
    pub signals: BTreeMap<String, Vec<Option<f64>>>,
}

/// Slot enumeration, frame assignment and CAN sampling by direct sweeps.
pub fn oracle_sync(camera_ts: &[Vec<u64>], can: &[(u64, u32, Vec<u8>)], specs: &[SignalSpec]) -> OracleSync {
    let t0 = camera_ts.iter().map(|c| c[0]).max().unwrap();
    let end = camera_ts.iter().map(|c| *c.last().unwrap()).min().unwrap();
    let mut slots = Vec::new();
    let mut k = 0u64;
    loop {
        let ts = t0 + k * 1_000_000 / 30;
        if ts > end {
            break;
        }
        slots.push(ts);
        k += 1;
    }
    // both sweeps rely on rows being in ts order, which the callers check
    let frames = camera_ts
        .iter()
        .map(|cam| {
            let mut i = 0usize;
            slots
                .iter()
                .map(|&s| {
                    while i + 1 < cam.len() && cam[i + 1] <= s {
                        i += 1;
                    }
                    assert!(cam[i] <= s);
                    i as u64
                })
                .collect()
        })
        .collect();
    let mut signals = BTreeMap::new();
    for spec in specs {
        let id = spec.id.raw();
        let mut points: Vec<(u64, f64)> =
            can.iter().filter(|(_, fid, _)| *fid == id).map(|(ts, _, p)| (*ts, oracle_value(p, spec))).collect();
        points.sort_by_key(|p| p.0);
        let mut j = 0usize;
        let values = slots
            .iter()
            .map(|&s| {
                if points.is_empty() {
                    return None;
                }
                while j + 1 < points.len() && points[j + 1].0 <= s {
                    j += 1;
                }
                // candidates: the last point at or before s and the first after it
                let mut best = points[j];
                if let Some(&next) = points.get(j + 1) {
                    if next.0.abs_diff(s) < best.0.abs_diff(s) {
                        best = next;
                    }
                }
                Some(best.1)
            })
            .collect();
        signals.insert(spec.name.clone(), values);
    }
    OracleSync { slots, frames, signals }
}

pub fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

pub fn only_child(dir: &Path) -> PathBuf {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    entries.pop().unwrap()
}
