//! SQLite fleet catalog: roster, trips, epochs, statistics and the homebase
//! and maintenance logs.

mod ingest;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use chrono::NaiveDate;
use rusqlite::types::ToSql;
use rusqlite::{params, Connection, OptionalExtension, Transaction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use avt_core::health::{LogEntry, MaintenanceAction, MaintenanceEvent, StatusReport};
use avt_core::stats::{FleetStats, TripMeasures};
use avt_core::Timestamp;

pub use ingest::{geojson_tracks, ingest_trip, measure_trip, read_synced_table, IngestError, SyncedTable, TripMetrics};

const MIGRATIONS: &[&str] = &[include_str!("../../migrations/0001_init.sql")];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("trip {0} is already registered")]
    DuplicateTrip(String),
    #[error("foreign key violation: {0}")]
    ForeignKeyViolation(String),
    #[error("unknown epoch label {0:?}")]
    UnknownLabel(String),
    #[error("invalid epoch label {0:?}")]
    InvalidLabel(String),
    #[error("epoch {start}..={end} outside the {slots} slots of trip {trip_id}")]
    EpochOutOfRange { trip_id: i64, start: u64, end: u64, slots: u64 },
    #[error("{0} out of range for the catalog")]
    OutOfRange(&'static str),
    #[error("corrupt row: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Sql(#[from] rusqlite::Error),
}

type Result<T, E = CatalogError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rider {
    pub rider_id: u32,
    #[serde(default)]
    pub notes: String,
    #[serde(default)]
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub vehicle_id: u32,
    #[serde(default)]
    pub make: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default)]
    pub color: String,
    #[serde(default)]
    pub technologies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instrumentation {
    pub rider_id: u32,
    pub vehicle_id: u32,
    pub start_date: NaiveDate,
    #[serde(default)]
    pub end_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Primary,
    Secondary,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Primary => "primary",
            Role::Secondary => "secondary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participation {
    pub subject_id: u32,
    pub study_id: u32,
    pub vehicle_id: u32,
    pub role: Role,
    pub start_date: NaiveDate,
    #[serde(default)]
    pub end_date: Option<NaiveDate>,
}

fn default_epoch_signals() -> BTreeMap<String, String> {
    BTreeMap::from([("autopilot".to_string(), "autopilot".to_string())])
}

/// Fleet roster as loaded from `ingest --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    #[serde(default)]
    pub riders: Vec<Rider>,
    #[serde(default)]
    pub vehicles: Vec<Vehicle>,
    #[serde(default)]
    pub instrumentations: Vec<Instrumentation>,
    #[serde(default)]
    pub participations: Vec<Participation>,
    /// Epoch label to the decoded signal whose non-zero runs define it.
    #[serde(default = "default_epoch_signals")]
    pub epoch_signals: BTreeMap<String, String>,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            riders: Vec::new(),
            vehicles: Vec::new(),
            instrumentations: Vec::new(),
            participations: Vec::new(),
            epoch_signals: default_epoch_signals(),
        }
    }
}

impl FleetConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceSource {
    Can,
    Gps,
    None,
}

impl DistanceSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceSource::Can => "can",
            DistanceSource::Gps => "gps",
            DistanceSource::None => "none",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "can" => Some(DistanceSource::Can),
            "gps" => Some(DistanceSource::Gps),
            "none" => Some(DistanceSource::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub name: String,
    pub directory: String,
    pub study_id: u32,
    pub vehicle_id: u32,
    pub subject_id: u32,
    pub rider_id: u32,
    pub start_ts: Timestamp,
    pub end_ts: Timestamp,
    pub date: NaiveDate,
    pub synced: bool,
    pub cameras: Vec<String>,
    pub has_gps: bool,
    pub has_imu: bool,
    pub has_audio: bool,
    pub slot_count: u64,
    pub frame_count: u64,
    pub distance_m: f64,
    pub distance_source: DistanceSource,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRow {
    pub trip_id: i64,
    #[serde(flatten)]
    pub record: TripRecord,
}

impl TripRow {
    pub fn measures(&self) -> TripMeasures {
        TripMeasures {
            vehicle_id: self.record.vehicle_id,
            subject_id: self.record.subject_id,
            date: self.record.date,
            distance_m: self.record.distance_m,
            frame_count: self.record.frame_count,
        }
    }
}

/// Trip selection. Empty fields match everything; dates are inclusive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TripQuery {
    #[serde(default)]
    pub technologies: Vec<String>,
    #[serde(default)]
    pub epoch_label: Option<String>,
    #[serde(default)]
    pub from: Option<NaiveDate>,
    #[serde(default)]
    pub to: Option<NaiveDate>,
    #[serde(default)]
    pub rider_id: Option<u32>,
    #[serde(default)]
    pub vehicle_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub trip_name: String,
    pub reason: String,
    pub decided_ts: Timestamp,
    pub quarantine_path: String,
}

/// Labels become table names, so they are kept to a safe alphabet.
pub fn valid_label(label: &str) -> bool {
    let mut chars = label.chars();
    label.len() <= 32
        && chars.next().is_some_and(|c| c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn int(v: u64, what: &'static str) -> Result<i64> {
    i64::try_from(v).map_err(|_| CatalogError::OutOfRange(what))
}

fn uint(v: i64, what: &str) -> Result<u64> {
    u64::try_from(v).map_err(|_| CatalogError::Corrupt(format!("negative {what}")))
}

fn date_col(s: &str) -> Result<NaiveDate> {
    s.parse().map_err(|_| CatalogError::Corrupt(format!("bad date {s:?}")))
}

pub struct Catalog {
    conn: Mutex<Connection>,
}

impl Catalog {
    pub fn open(path: &Path) -> Result<Self> {
        Self::init(Connection::open(path)?)
    }

    pub fn open_in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(mut conn: Connection) -> Result<Self> {
        conn.pragma_update(None, "foreign_keys", true)?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        let version: usize = conn.pragma_query_value(None, "user_version", |r| r.get::<_, i64>(0))? as usize;
        if version < MIGRATIONS.len() {
            let tx = conn.transaction()?;
            for sql in &MIGRATIONS[version..] {
                tx.execute_batch(sql)?;
            }
            tx.pragma_update(None, "user_version", MIGRATIONS.len() as i64)?;
            tx.commit()?;
        }
        Ok(Catalog { conn: Mutex::new(conn) })
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn schema_version(&self) -> Result<i64> {
        Ok(self.conn().pragma_query_value(None, "user_version", |r| r.get(0))?)
    }

    /// Inserts or updates the roster. Re-applying the same roster is a no-op.
    pub fn apply_fleet(&self, fleet: &FleetConfig) -> Result<()> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        for r in &fleet.riders {
            tx.execute(
                "INSERT INTO riders (rider_id, notes, address) VALUES (?1, ?2, ?3)
                 ON CONFLICT (rider_id) DO UPDATE SET notes = excluded.notes, address = excluded.address",
                params![r.rider_id, r.notes, r.address],
            )?;
        }
        for v in &fleet.vehicles {
            let tech = serde_json::to_string(&v.technologies).expect("strings serialize");
            tx.execute(
                "INSERT INTO vehicles (vehicle_id, make, model, year, color, technologies) VALUES (?1, ?2, ?3, ?4, ?5, ?6)
                 ON CONFLICT (vehicle_id) DO UPDATE SET make = excluded.make, model = excluded.model,
                   year = excluded.year, color = excluded.color, technologies = excluded.technologies",
                params![v.vehicle_id, v.make, v.model, v.year, v.color, tech],
            )?;
        }
        for i in &fleet.instrumentations {
            insert_checked(
                &tx,
                "INSERT OR IGNORE INTO instrumentations (rider_id, vehicle_id, start_date, end_date) VALUES (?1, ?2, ?3, ?4)",
                params![i.rider_id, i.vehicle_id, i.start_date.to_string(), i.end_date.map(|d| d.to_string())],
                || format!("instrumentation of rider {} in vehicle {}", i.rider_id, i.vehicle_id),
            )?;
        }
        for p in &fleet.participations {
            insert_checked(
                &tx,
                "INSERT OR IGNORE INTO participations (subject_id, study_id, vehicle_id, role, start_date, end_date)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                params![
                    p.subject_id,
                    p.study_id,
                    p.vehicle_id,
                    p.role.as_str(),
                    p.start_date.to_string(),
                    p.end_date.map(|d| d.to_string())
                ],
                || format!("participation of subject {} in vehicle {}", p.subject_id, p.vehicle_id),
            )?;
        }
        for (label, signal) in &fleet.epoch_signals {
            register_label(&tx, label, signal)?;
        }
        tx.commit()?;
        Ok(())
    }

    pub fn register_epoch_label(&self, label: &str, signal: &str) -> Result<()> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        register_label(&tx, label, signal)?;
        tx.commit()?;
        Ok(())
    }

    pub fn epoch_labels(&self) -> Result<BTreeMap<String, String>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT label, signal FROM epoch_labels ORDER BY label")?;
        let rows = stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn register_trip(&self, trip: &TripRecord) -> Result<i64> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let id = insert_trip(&tx, trip)?;
        tx.commit()?;
        Ok(id)
    }

    /// Registers a trip together with its epochs, all or nothing.
    pub fn register_trip_with_epochs(&self, trip: &TripRecord, epochs: &BTreeMap<String, Vec<(u64, u64)>>) -> Result<i64> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let id = insert_trip(&tx, trip)?;
        for (label, list) in epochs {
            replace_epochs(&tx, id, label, list)?;
        }
        tx.commit()?;
        Ok(id)
    }

    /// Replaces the epochs of one label for a trip. Frame indexes are slots
    /// of the trip's synchronized grid.
    pub fn record_epochs(&self, trip_id: i64, label: &str, epochs: &[(u64, u64)]) -> Result<()> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        replace_epochs(&tx, trip_id, label, epochs)?;
        tx.commit()?;
        Ok(())
    }

    pub fn epochs(&self, trip_id: i64, label: &str) -> Result<Vec<(u64, u64)>> {
        let conn = self.conn();
        ensure_label(&conn, label)?;
        let mut stmt = conn.prepare(&format!(
            "SELECT start_frame, end_frame FROM epochs_{label} WHERE trip_id = ?1 ORDER BY start_frame"
        ))?;
        let rows = stmt.query_map([trip_id], |r| Ok((r.get::<_, i64>(0)?, r.get::<_, i64>(1)?)))?;
        rows.map(|r| {
            let (a, b) = r?;
            Ok((uint(a, "frame")?, uint(b, "frame")?))
        })
        .collect()
    }

    pub fn trip_by_name(&self, name: &str) -> Result<Option<TripRow>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(&format!("SELECT {TRIP_COLUMNS} FROM trips t WHERE t.name = ?1"))?;
        let raw = stmt.query_row([name], RawTrip::from_row).optional()?;
        raw.map(RawTrip::into_row).transpose()
    }

    pub fn query_trips(&self, q: &TripQuery) -> Result<Vec<TripRow>> {
        let conn = self.conn();
        let mut sql = format!("SELECT {TRIP_COLUMNS} FROM trips t JOIN vehicles v ON v.vehicle_id = t.vehicle_id WHERE 1 = 1");
        let mut args: Vec<Box<dyn ToSql>> = Vec::new();
        for tech in &q.technologies {
            args.push(Box::new(tech.clone()));
            sql += &format!(" AND EXISTS (SELECT 1 FROM json_each(v.technologies) j WHERE j.value = ?{})", args.len());
        }
        if let Some(label) = &q.epoch_label {
            ensure_label(&conn, label)?;
            sql += &format!(" AND EXISTS (SELECT 1 FROM epochs_{label} e WHERE e.trip_id = t.trip_id)");
        }
        if let Some(from) = q.from {
            args.push(Box::new(from.to_string()));
            sql += &format!(" AND t.date >= ?{}", args.len());
        }
        if let Some(to) = q.to {
            args.push(Box::new(to.to_string()));
            sql += &format!(" AND t.date <= ?{}", args.len());
        }
        if let Some(rider) = q.rider_id {
            args.push(Box::new(rider));
            sql += &format!(" AND t.rider_id = ?{}", args.len());
        }
        if let Some(vehicle) = q.vehicle_id {
            args.push(Box::new(vehicle));
            sql += &format!(" AND t.vehicle_id = ?{}", args.len());
        }
        sql += " ORDER BY t.start_ts, t.name";
        let mut stmt = conn.prepare(&sql)?;
        let refs: Vec<&dyn ToSql> = args.iter().map(|a| a.as_ref()).collect();
        let raw = stmt.query_map(refs.as_slice(), RawTrip::from_row)?.collect::<Result<Vec<_>, _>>()?;
        raw.into_iter().map(RawTrip::into_row).collect()
    }

    pub fn fleet_stats(&self, q: &TripQuery) -> Result<FleetStats> {
        let trips = self.query_trips(q)?;
        let measures: Vec<TripMeasures> = trips.iter().map(TripRow::measures).collect();
        Ok(FleetStats::from_trips(&measures))
    }

    pub fn record_removal(&self, removal: &Removal) -> Result<()> {
        self.conn().execute(
            "INSERT INTO removals (trip_name, reason, decided_ts, quarantine_path) VALUES (?1, ?2, ?3, ?4)",
            params![removal.trip_name, removal.reason, int(removal.decided_ts.as_micros(), "timestamp")?, removal.quarantine_path],
        )?;
        Ok(())
    }

    pub fn removals(&self) -> Result<Vec<Removal>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT trip_name, reason, decided_ts, quarantine_path FROM removals ORDER BY id")?;
        let rows = stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get::<_, i64>(2)?, r.get(3)?)))?;
        rows.map(|r| {
            let (trip_name, reason, ts, quarantine_path) = r?;
            Ok(Removal { trip_name, reason, decided_ts: Timestamp::from_micros(uint(ts, "timestamp")?), quarantine_path })
        })
        .collect()
    }

    /// Appends a homebase entry. Returns false when the rider already has an
    /// entry with this sequence number.
    pub fn append_homebase(&self, entry: &LogEntry) -> Result<bool> {
        let r = &entry.report;
        let json = serde_json::to_string(r).expect("report serializes");
        let n = self.conn().execute(
            "INSERT OR IGNORE INTO homebase_log
               (rider_id, received_ts, seq, sent_ts, free_disk_bytes, disk_capacity_bytes, power_w, report)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            params![
                r.rider_id,
                int(entry.received_ts.as_micros(), "timestamp")?,
                int(r.seq, "sequence number")?,
                int(r.sent_ts.as_micros(), "timestamp")?,
                int(r.free_disk_bytes, "free disk bytes")?,
                int(r.disk_capacity_bytes, "disk capacity")?,
                r.power_w,
                json
            ],
        )?;
        Ok(n == 1)
    }

    pub fn homebase_log(&self, rider_id: Option<u32>) -> Result<Vec<LogEntry>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT received_ts, report FROM homebase_log
             WHERE ?1 IS NULL OR rider_id = ?1 ORDER BY received_ts, seq",
        )?;
        let rows = stmt.query_map([rider_id], |r| Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?)))?;
        rows.map(|r| {
            let (ts, json) = r?;
            let report: StatusReport = serde_json::from_str(&json).map_err(|e| CatalogError::Corrupt(e.to_string()))?;
            Ok(LogEntry { received_ts: Timestamp::from_micros(uint(ts, "timestamp")?), report })
        })
        .collect()
    }

    /// Highest sequence number seen per rider.
    pub fn last_sequences(&self) -> Result<Vec<(u32, u64)>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT rider_id, MAX(seq) FROM homebase_log GROUP BY rider_id")?;
        let rows = stmt.query_map([], |r| Ok((r.get::<_, u32>(0)?, r.get::<_, i64>(1)?)))?;
        rows.map(|r| {
            let (rider, seq) = r?;
            Ok((rider, uint(seq, "sequence number")?))
        })
        .collect()
    }

    pub fn record_maintenance(&self, event: &MaintenanceEvent) -> Result<()> {
        self.conn().execute(
            "INSERT INTO maintenance_log (rider_id, ts, action, note) VALUES (?1, ?2, ?3, ?4)",
            params![event.rider_id, int(event.ts.as_micros(), "timestamp")?, event.action.as_str(), event.note],
        )?;
        Ok(())
    }

    pub fn maintenance_log(&self, rider_id: Option<u32>) -> Result<Vec<MaintenanceEvent>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT rider_id, ts, action, note FROM maintenance_log
             WHERE ?1 IS NULL OR rider_id = ?1 ORDER BY ts, id",
        )?;
        let rows = stmt.query_map([rider_id], |r| Ok((r.get::<_, u32>(0)?, r.get::<_, i64>(1)?, r.get::<_, String>(2)?, r.get(3)?)))?;
        rows.map(|r| {
            let (rider_id, ts, action, note) = r?;
            let action = MaintenanceAction::parse(&action).ok_or_else(|| CatalogError::Corrupt(format!("action {action:?}")))?;
            Ok(MaintenanceEvent { rider_id, ts: Timestamp::from_micros(uint(ts, "timestamp")?), action, note })
        })
        .collect()
    }

    /// A rider is known if it is on the roster or has ever reported in.
    pub fn known_rider(&self, rider_id: u32) -> Result<bool> {
        Ok(self.conn().query_row(
            "SELECT EXISTS (SELECT 1 FROM riders WHERE rider_id = ?1)
                 OR EXISTS (SELECT 1 FROM homebase_log WHERE rider_id = ?1)",
            [rider_id],
            |r| r.get(0),
        )?)
    }
}

fn insert_checked(tx: &Transaction<'_>, sql: &str, args: &[&dyn ToSql], what: impl Fn() -> String) -> Result<()> {
    match tx.execute(sql, args) {
        Ok(_) => Ok(()),
        Err(e) if is_fk_error(&e) => Err(CatalogError::ForeignKeyViolation(what())),
        Err(e) => Err(e.into()),
    }
}

fn is_fk_error(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.extended_code == rusqlite::ffi::SQLITE_CONSTRAINT_FOREIGNKEY)
}

fn register_label(tx: &Transaction<'_>, label: &str, signal: &str) -> Result<()> {
    if !valid_label(label) {
        return Err(CatalogError::InvalidLabel(label.to_string()));
    }
    tx.execute(
        "INSERT INTO epoch_labels (label, signal) VALUES (?1, ?2)
         ON CONFLICT (label) DO UPDATE SET signal = excluded.signal",
        params![label, signal],
    )?;
    tx.execute_batch(&format!(
        "CREATE TABLE IF NOT EXISTS epochs_{label} (
             trip_id     INTEGER NOT NULL REFERENCES trips(trip_id),
             start_frame INTEGER NOT NULL,
             end_frame   INTEGER NOT NULL,
             CHECK (0 <= start_frame AND start_frame <= end_frame)
         );
         CREATE INDEX IF NOT EXISTS epochs_{label}_trip ON epochs_{label}(trip_id);"
    ))?;
    Ok(())
}

fn ensure_label(conn: &Connection, label: &str) -> Result<()> {
    let known: bool = valid_label(label)
        && conn.query_row("SELECT EXISTS (SELECT 1 FROM epoch_labels WHERE label = ?1)", [label], |r| r.get(0))?;
    if known {
        Ok(())
    } else {
        Err(CatalogError::UnknownLabel(label.to_string()))
    }
}

fn replace_epochs(tx: &Transaction<'_>, trip_id: i64, label: &str, epochs: &[(u64, u64)]) -> Result<()> {
    ensure_label(tx, label)?;
    let slots: Option<i64> = tx.query_row("SELECT slot_count FROM trips WHERE trip_id = ?1", [trip_id], |r| r.get(0)).optional()?;
    let slots = match slots {
        Some(s) => uint(s, "slot count")?,
        None => return Err(CatalogError::ForeignKeyViolation(format!("trip {trip_id} does not exist"))),
    };
    for &(start, end) in epochs {
        if start > end || end >= slots {
            return Err(CatalogError::EpochOutOfRange { trip_id, start, end, slots });
        }
    }
    tx.execute(&format!("DELETE FROM epochs_{label} WHERE trip_id = ?1"), [trip_id])?;
    let mut stmt = tx.prepare(&format!("INSERT INTO epochs_{label} (trip_id, start_frame, end_frame) VALUES (?1, ?2, ?3)"))?;
    for &(start, end) in epochs {
        stmt.execute(params![trip_id, int(start, "frame")?, int(end, "frame")?])?;
    }
    Ok(())
}

fn exists(tx: &Transaction<'_>, sql: &str, args: &[&dyn ToSql]) -> Result<bool> {
    Ok(tx.query_row(&format!("SELECT EXISTS ({sql})"), args, |r| r.get(0))?)
}

fn insert_trip(tx: &Transaction<'_>, t: &TripRecord) -> Result<i64> {
    if exists(tx, "SELECT 1 FROM trips WHERE name = ?1 OR directory = ?2", params![t.name, t.directory])? {
        return Err(CatalogError::DuplicateTrip(t.name.clone()));
    }
    if !exists(tx, "SELECT 1 FROM riders WHERE rider_id = ?1", params![t.rider_id])? {
        return Err(CatalogError::ForeignKeyViolation(format!("rider {} is not registered", t.rider_id)));
    }
    if !exists(tx, "SELECT 1 FROM vehicles WHERE vehicle_id = ?1", params![t.vehicle_id])? {
        return Err(CatalogError::ForeignKeyViolation(format!("vehicle {} is not registered", t.vehicle_id)));
    }
    if !exists(tx, "SELECT 1 FROM participations WHERE subject_id = ?1 AND study_id = ?2", params![t.subject_id, t.study_id])? {
        return Err(CatalogError::ForeignKeyViolation(format!(
            "subject {} has no participation in study {}",
            t.subject_id, t.study_id
        )));
    }
    let cameras = serde_json::to_string(&t.cameras).expect("strings serialize");
    let flags = serde_json::to_string(&t.flags).expect("strings serialize");
    tx.execute(
        "INSERT INTO trips (name, directory, study_id, vehicle_id, subject_id, rider_id, start_ts, end_ts, date,
                            synced, cameras, has_gps, has_imu, has_audio, slot_count, frame_count,
                            distance_m, distance_source, flags)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13, ?14, ?15, ?16, ?17, ?18, ?19)",
        params![
            t.name,
            t.directory,
            t.study_id,
            t.vehicle_id,
            t.subject_id,
            t.rider_id,
            int(t.start_ts.as_micros(), "timestamp")?,
            int(t.end_ts.as_micros(), "timestamp")?,
            t.date.to_string(),
            t.synced,
            cameras,
            t.has_gps,
            t.has_imu,
            t.has_audio,
            int(t.slot_count, "slot count")?,
            int(t.frame_count, "frame count")?,
            t.distance_m,
            t.distance_source.as_str(),
            flags
        ],
    )?;
    Ok(tx.last_insert_rowid())
}

const TRIP_COLUMNS: &str = "t.trip_id, t.name, t.directory, t.study_id, t.vehicle_id, t.subject_id, t.rider_id, \
     t.start_ts, t.end_ts, t.date, t.synced, t.cameras, t.has_gps, t.has_imu, t.has_audio, t.slot_count, \
     t.frame_count, t.distance_m, t.distance_source, t.flags";

struct RawTrip {
    trip_id: i64,
    name: String,
    directory: String,
    ids: [u32; 4],
    start_ts: i64,
    end_ts: i64,
    date: String,
    synced: bool,
    cameras: String,
    has: [bool; 3],
    slot_count: i64,
    frame_count: i64,
    distance_m: f64,
    distance_source: String,
    flags: String,
}

impl RawTrip {
    fn from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<Self> {
        Ok(RawTrip {
            trip_id: r.get(0)?,
            name: r.get(1)?,
            directory: r.get(2)?,
            ids: [r.get(3)?, r.get(4)?, r.get(5)?, r.get(6)?],
            start_ts: r.get(7)?,
            end_ts: r.get(8)?,
            date: r.get(9)?,
            synced: r.get(10)?,
            cameras: r.get(11)?,
            has: [r.get(12)?, r.get(13)?, r.get(14)?],
            slot_count: r.get(15)?,
            frame_count: r.get(16)?,
            distance_m: r.get(17)?,
            distance_source: r.get(18)?,
            flags: r.get(19)?,
        })
    }

    fn into_row(self) -> Result<TripRow> {
        let json = |s: &str| serde_json::from_str::<Vec<String>>(s).map_err(|e| CatalogError::Corrupt(e.to_string()));
        let [study_id, vehicle_id, subject_id, rider_id] = self.ids;
        let [has_gps, has_imu, has_audio] = self.has;
        Ok(TripRow {
            trip_id: self.trip_id,
            record: TripRecord {
                name: self.name,
                directory: self.directory,
                study_id,
                vehicle_id,
                subject_id,
                rider_id,
                start_ts: Timestamp::from_micros(uint(self.start_ts, "timestamp")?),
                end_ts: Timestamp::from_micros(uint(self.end_ts, "timestamp")?),
                date: date_col(&self.date)?,
                synced: self.synced,
                cameras: json(&self.cameras)?,
                has_gps,
                has_imu,
                has_audio,
                slot_count: uint(self.slot_count, "slot count")?,
                frame_count: uint(self.frame_count, "frame count")?,
                distance_m: self.distance_m,
                distance_source: DistanceSource::parse(&self.distance_source)
                    .ok_or_else(|| CatalogError::Corrupt(format!("distance source {:?}", self.distance_source)))?,
                flags: json(&self.flags)?,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn fleet() -> FleetConfig {
        FleetConfig {
            riders: vec![Rider { rider_id: 7, notes: String::new(), address: String::new() }],
            vehicles: vec![
                Vehicle {
                    vehicle_id: 3,
                    make: "Tesla".into(),
                    model: "Model S".into(),
                    year: Some(2016),
                    color: "red".into(),
                    technologies: vec!["autopilot".into()],
                },
                Vehicle {
                    vehicle_id: 4,
                    make: "Volvo".into(),
                    model: "S90".into(),
                    year: None,
                    color: String::new(),
                    technologies: vec![],
                },
            ],
            instrumentations: vec![Instrumentation { rider_id: 7, vehicle_id: 3, start_date: d("2016-05-01"), end_date: None }],
            participations: vec![Participation {
                subject_id: 11,
                study_id: 1,
                vehicle_id: 3,
                role: Role::Primary,
                start_date: d("2016-05-01"),
                end_date: None,
            }],
            ..FleetConfig::default()
        }
    }

    fn trip(name: &str, vehicle: u32, date: &str, meters: f64) -> TripRecord {
        TripRecord {
            name: name.into(),
            directory: format!("/raw/{name}"),
            study_id: 1,
            vehicle_id: vehicle,
            subject_id: 11,
            rider_id: 7,
            start_ts: Timestamp::from_micros(1_000),
            end_ts: Timestamp::from_micros(2_000),
            date: d(date),
            synced: true,
            cameras: vec!["face".into()],
            has_gps: true,
            has_imu: false,
            has_audio: false,
            slot_count: 100,
            frame_count: 250,
            distance_m: meters,
            distance_source: DistanceSource::Can,
            flags: vec![],
        }
    }

    fn catalog() -> Catalog {
        let c = Catalog::open_in_memory().unwrap();
        c.apply_fleet(&fleet()).unwrap();
        c
    }

    #[test]
    fn migration_sets_version() {
        assert_eq!(catalog().schema_version().unwrap(), 1);
    }

    #[test]
    fn reopening_keeps_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.db");
        {
            let c = Catalog::open(&path).unwrap();
            c.apply_fleet(&fleet()).unwrap();
            c.register_trip(&trip("a", 3, "2016-06-01", 10.0)).unwrap();
        }
        let c = Catalog::open(&path).unwrap();
        assert_eq!(c.query_trips(&TripQuery::default()).unwrap().len(), 1);
        c.apply_fleet(&fleet()).unwrap();
    }

    #[test]
    fn trip_round_trips() {
        let c = catalog();
        let t = trip("a", 3, "2016-06-01", 10.0);
        let id = c.register_trip(&t).unwrap();
        let row = c.trip_by_name("a").unwrap().unwrap();
        assert_eq!(row.trip_id, id);
        assert_eq!(row.record, t);
    }

    #[test]
    fn duplicate_name_is_rejected() {
        let c = catalog();
        c.register_trip(&trip("a", 3, "2016-06-01", 10.0)).unwrap();
        let mut again = trip("a", 3, "2016-06-01", 10.0);
        again.directory = "/elsewhere".into();
        assert!(matches!(c.register_trip(&again), Err(CatalogError::DuplicateTrip(_))));
    }

    #[test]
    fn unregistered_references_are_rejected() {
        let c = catalog();
        let mut t = trip("a", 3, "2016-06-01", 1.0);
        t.rider_id = 8;
        assert!(matches!(c.register_trip(&t), Err(CatalogError::ForeignKeyViolation(_))));
        let mut t = trip("b", 9, "2016-06-01", 1.0);
        t.directory = "/b".into();
        assert!(matches!(c.register_trip(&t), Err(CatalogError::ForeignKeyViolation(_))));
        let mut t = trip("c", 3, "2016-06-01", 1.0);
        t.subject_id = 12;
        assert!(matches!(c.register_trip(&t), Err(CatalogError::ForeignKeyViolation(_))));
        assert!(c.query_trips(&TripQuery::default()).unwrap().is_empty());
    }

    #[test]
    fn instrumentation_needs_known_vehicle() {
        let c = catalog();
        let mut f = FleetConfig::default();
        f.instrumentations.push(Instrumentation { rider_id: 7, vehicle_id: 99, start_date: d("2016-01-01"), end_date: None });
        assert!(matches!(c.apply_fleet(&f), Err(CatalogError::ForeignKeyViolation(_))));
    }

    #[test]
    fn epochs_are_range_checked_and_queryable() {
        let c = catalog();
        let a = c.register_trip(&trip("a", 3, "2016-06-01", 1.0)).unwrap();
        c.register_trip(&trip("b", 3, "2016-06-02", 1.0)).unwrap();
        c.record_epochs(a, "autopilot", &[(0, 9), (20, 99)]).unwrap();
        assert!(matches!(c.record_epochs(a, "autopilot", &[(50, 100)]), Err(CatalogError::EpochOutOfRange { .. })));
        assert!(matches!(c.record_epochs(a, "nosuch", &[]), Err(CatalogError::UnknownLabel(_))));
        assert_eq!(c.epochs(a, "autopilot").unwrap(), vec![(0, 9), (20, 99)]);
        let q = TripQuery { epoch_label: Some("autopilot".into()), ..TripQuery::default() };
        let hits: Vec<String> = c.query_trips(&q).unwrap().into_iter().map(|t| t.record.name).collect();
        assert_eq!(hits, ["a"]);
        assert!(matches!(c.register_epoch_label("x; DROP TABLE trips", "s"), Err(CatalogError::InvalidLabel(_))));
    }

    #[test]
    fn query_filters_combine() {
        let c = catalog();
        c.register_trip(&trip("a", 3, "2016-06-01", 1.0)).unwrap();
        let mut f = fleet();
        f.participations[0].vehicle_id = 4;
        c.apply_fleet(&f).unwrap();
        c.register_trip(&trip("b", 4, "2016-06-03", 1.0)).unwrap();
        let names = |q: TripQuery| -> Vec<String> { c.query_trips(&q).unwrap().into_iter().map(|t| t.record.name).collect() };
        assert_eq!(names(TripQuery { technologies: vec!["autopilot".into()], ..Default::default() }), ["a"]);
        assert_eq!(names(TripQuery { from: Some(d("2016-06-02")), ..Default::default() }), ["b"]);
        assert_eq!(names(TripQuery { to: Some(d("2016-06-01")), ..Default::default() }), ["a"]);
        assert_eq!(names(TripQuery { rider_id: Some(7), ..Default::default() }), ["a", "b"]);
        assert!(names(TripQuery { rider_id: Some(8), ..Default::default() }).is_empty());
    }

    #[test]
    fn stats_count_vehicle_days() {
        let c = catalog();
        c.register_trip(&trip("a", 3, "2016-06-01", 1609.344)).unwrap();
        c.register_trip(&trip("b", 3, "2016-06-01", 1609.344)).unwrap();
        c.register_trip(&trip("c", 3, "2016-06-02", 0.0)).unwrap();
        let s = c.fleet_stats(&TripQuery::default()).unwrap();
        assert_eq!(s.participant_days, 2);
        assert_eq!(s.trip_count, 3);
        assert_eq!(s.frame_count, 750);
        assert!((s.miles - 2.0).abs() < 1e-9);
    }

    fn report(rider: u32, seq: u64) -> StatusReport {
        StatusReport {
            version: 1,
            rider_id: rider,
            seq,
            sent_ts: Timestamp::from_micros(seq),
            trip: None,
            gps: None,
            power_w: 12.5,
            temperatures: avt_core::health::Temperatures { external_c: 20.0, pmu_c: 30.0, hdd_c: 35.0 },
            free_disk_bytes: 10,
            disk_capacity_bytes: 100,
            lighthouse_interval_s: 60.0,
        }
    }

    #[test]
    fn homebase_log_dedups_sequences() {
        let c = catalog();
        let e = LogEntry { received_ts: Timestamp::from_micros(5), report: report(9, 1) };
        assert!(c.append_homebase(&e).unwrap());
        assert!(!c.append_homebase(&e).unwrap());
        c.append_homebase(&LogEntry { received_ts: Timestamp::from_micros(6), report: report(9, 4) }).unwrap();
        assert_eq!(c.last_sequences().unwrap(), vec![(9, 4)]);
        assert_eq!(c.homebase_log(Some(9)).unwrap()[0], e);
        assert!(c.homebase_log(Some(1)).unwrap().is_empty());
        assert!(c.known_rider(9).unwrap());
        assert!(c.known_rider(7).unwrap());
        assert!(!c.known_rider(1).unwrap());
        let huge = LogEntry { received_ts: Timestamp::from_micros(5), report: report(9, u64::MAX) };
        assert!(matches!(c.append_homebase(&huge), Err(CatalogError::OutOfRange(_))));
    }

    #[test]
    fn maintenance_round_trips() {
        let c = catalog();
        let ev = MaintenanceEvent { rider_id: 7, ts: Timestamp::from_micros(9), action: MaintenanceAction::DriveSwap, note: "swap".into() };
        c.record_maintenance(&ev).unwrap();
        assert_eq!(c.maintenance_log(None).unwrap(), vec![ev]);
    }

    #[test]
    fn labels_are_restricted() {
        assert!(valid_label("autopilot"));
        assert!(valid_label("lane_keep2"));
        assert!(!valid_label("2x"));
        assert!(!valid_label("Auto"));
        assert!(!valid_label(""));
        assert!(!valid_label("a-b"));
    }
}
