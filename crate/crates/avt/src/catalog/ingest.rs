use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use avt_core::stats::{integrate_slot_speed, track_length_m, GeoPoint};
use avt_core::sync::{extract_epochs, flags_from_values};
use avt_core::Timestamp;

use super::{Catalog, CatalogError, DistanceSource, TripQuery, TripRecord};
use crate::dacman::ConfigError;
use crate::formats::{self, FormatError};
use crate::layout::{TripLayout, SYNCED_CAN_FILE};
use crate::scan;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {msg}")]
    Table { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A synchronized table read back column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncedTable {
    pub columns: Vec<String>,
    pub slots: Vec<Timestamp>,
    /// `values[c][k]` is column `c` at slot `k`.
    pub values: Vec<Vec<Option<f64>>>,
}

impl SyncedTable {
    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns.iter().position(|c| c == name).map(|i| self.values[i].as_slice())
    }
}

pub fn read_synced_table(path: &Path) -> Result<SyncedTable, IngestError> {
    let bad = |msg: String| IngestError::Table { path: path.to_path_buf(), msg };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.get(0) != Some("slot") || header.get(1) != Some("ts_micro") {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let columns: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut table = SyncedTable { values: vec![Vec::new(); columns.len()], columns, slots: Vec::new() };
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.get(0).and_then(|s| s.parse::<usize>().ok()) != Some(k) {
            return Err(bad(format!("slot {k} out of order")));
        }
        let ts = rec.get(1).and_then(|s| s.parse::<u64>().ok()).ok_or_else(|| bad(format!("bad ts_micro in slot {k}")))?;
        table.slots.push(Timestamp::from_micros(ts));
        for (c, col) in table.values.iter_mut().enumerate() {
            let cell = rec.get(c + 2).unwrap_or_default();
            let v = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| bad(format!("bad value {cell:?} in slot {k}")))?)
            };
            col.push(v);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripMetrics {
    pub synced: bool,
    pub slot_count: u64,
    pub frame_count: u64,
    pub distance_m: f64,
    pub distance_source: DistanceSource,
    pub epochs: BTreeMap<String, Vec<(u64, u64)>>,
}

/// Derives the catalog metrics of a trip from its raw directory and, if
/// present, its processed directory.
pub fn measure_trip(
    raw_dir: &Path,
    processed_dir: &Path,
    speed_signal: &str,
    epoch_signals: &BTreeMap<String, String>,
) -> Result<TripMetrics, IngestError> {
    let layout = TripLayout::new(raw_dir);
    let mut frame_count = 0u64;
    for cam in layout.cameras() {
        frame_count += scan::camera_frames(&layout, &cam)?.map_or(0, |p| p.rows.len() as u64);
    }
    let mut m = TripMetrics {
        synced: false,
        slot_count: 0,
        frame_count,
        distance_m: 0.0,
        distance_source: DistanceSource::None,
        epochs: BTreeMap::new(),
    };

    let synced_can = processed_dir.join(SYNCED_CAN_FILE);
    if synced_can.is_file() {
        let table = read_synced_table(&synced_can)?;
        m.synced = true;
        m.slot_count = table.slots.len() as u64;
        if let Some(speed) = table.column(speed_signal) {
            if speed.iter().any(Option::is_some) {
                m.distance_m = integrate_slot_speed(&table.slots, speed);
                m.distance_source = DistanceSource::Can;
            }
        }
        for (label, signal) in epoch_signals {
            if let Some(values) = table.column(signal) {
                let epochs = extract_epochs(&flags_from_values(values));
                m.epochs.insert(label.clone(), epochs.into_iter().map(|(a, b)| (a as u64, b as u64)).collect());
            }
        }
    }

    if m.distance_source == DistanceSource::None {
        let points = gps_track(&layout)?;
        if points.len() >= 2 {
            m.distance_m = track_length_m(&points);
            m.distance_source = DistanceSource::Gps;
        }
    }
    Ok(m)
}

fn gps_track(layout: &TripLayout) -> Result<Vec<GeoPoint>, IngestError> {
    let mut samples = scan::gps_samples(layout)?.map(|p| p.rows).unwrap_or_default();
    samples.sort_by_key(|s| s.ts);
    Ok(samples.iter().map(|s| GeoPoint { lat: s.latitude, lon: s.longitude }).collect())
}

/// Registers a cleaned trip, with its metrics and epochs, in one transaction.
pub fn ingest_trip(
    catalog: &Catalog,
    raw_dir: &Path,
    processed_root: &Path,
    speed_signal: &str,
    epoch_signals: &BTreeMap<String, String>,
) -> Result<i64, IngestError> {
    let layout = TripLayout::new(raw_dir);
    let dacman = layout.load_dacman()?;
    let specs = formats::read_specs(&layout.specs())?;
    let name = layout.name();
    let metrics = measure_trip(raw_dir, &processed_root.join(&name), speed_signal, epoch_signals)?;
    let directory = raw_dir
        .canonicalize()
        .map_err(|source| IngestError::Io { path: raw_dir.to_path_buf(), source })?;
    let start = specs.trip.start_ts_micro;
    let date = start.utc_date().ok_or_else(|| IngestError::Table {
        path: layout.specs(),
        msg: format!("start {start} has no calendar date"),
    })?;
    let record = TripRecord {
        name,
        directory: directory.display().to_string(),
        study_id: dacman.study_id,
        vehicle_id: dacman.vehicle_id,
        subject_id: dacman.subject_id,
        rider_id: dacman.rider_id,
        start_ts: start,
        end_ts: specs.trip.end_ts_micro,
        date,
        synced: metrics.synced,
        cameras: layout.cameras(),
        has_gps: specs.subsystems.contains_key("gps"),
        has_imu: specs.subsystems.contains_key("imu"),
        has_audio: layout.audio_raw().metadata().is_ok_and(|m| m.len() > 0),
        slot_count: metrics.slot_count,
        frame_count: metrics.frame_count,
        distance_m: metrics.distance_m,
        distance_source: metrics.distance_source,
        flags: Vec::new(),
    };
    Ok(catalog.register_trip_with_epochs(&record, &metrics.epochs)?)
}

/// GPS tracks of the matching trips as a GeoJSON FeatureCollection of
/// LineStrings. Trips with fewer than two fixes are left out.
pub fn geojson_tracks(catalog: &Catalog, q: &TripQuery) -> Result<Value, IngestError> {
    let mut features = Vec::new();
    for trip in catalog.query_trips(q)? {
        let layout = TripLayout::new(&trip.record.directory);
        let points = gps_track(&layout)?;
        if points.len() < 2 {
            continue;
        }
        let coords: Vec<[f64; 2]> = points.iter().map(|p| [p.lon, p.lat]).collect();
        features.push(json!({
            "type": "Feature",
            "geometry": { "type": "LineString", "coordinates": coords },
            "properties": {
                "trip": trip.record.name,
                "rider_id": trip.record.rider_id,
                "vehicle_id": trip.record.vehicle_id,
                "date": trip.record.date.to_string(),
                "distance_m": trip.record.distance_m,
            },
        }));
    }
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn synced_table_reads_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "slot,ts_micro,speed,autopilot\n0,10,,1\n1,43343,2.5,0\n").unwrap();
        let t = read_synced_table(&p).unwrap();
        assert_eq!(t.slots, vec![Timestamp::from_micros(10), Timestamp::from_micros(43343)]);
        assert_eq!(t.column("speed").unwrap(), &[None, Some(2.5)]);
        assert_eq!(t.column("autopilot").unwrap(), &[Some(1.0), Some(0.0)]);
        assert!(t.column("steering").is_none());
    }

    #[test]
    fn synced_table_rejects_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "slot,ts_micro,speed\n0,10,fast\n").unwrap();
        assert!(matches!(read_synced_table(&p), Err(IngestError::Table { .. })));
        fs::write(&p, "slot,ts_micro,speed\n1,10,1\n").unwrap();
        assert!(read_synced_table(&p).is_err());
        fs::write(&p, "frame,ts\n").unwrap();
        assert!(read_synced_table(&p).is_err());
    }
}
