//! Logger status reports and fleet-health flags derived from them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

pub const REPORT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripTiming {
    pub trip_id: String,
    pub start_ts: Timestamp,
    pub elapsed_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub external_c: f64,
    pub pmu_c: f64,
    pub hdd_c: f64,
}

/// Body of one periodic status message from a logger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub version: u16,
    pub rider_id: u32,
    pub seq: u64,
    pub sent_ts: Timestamp,
    pub trip: Option<TripTiming>,
    pub gps: Option<GpsFix>,
    pub power_w: f64,
    pub temperatures: Temperatures,
    pub free_disk_bytes: u64,
    pub disk_capacity_bytes: u64,
    pub lighthouse_interval_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("unsupported report version {0}")]
    Version(u16),
    #[error("free disk exceeds capacity")]
    DiskAccounting,
    #[error("lighthouse interval must be positive")]
    Interval,
}

impl StatusReport {
    pub fn validate(&self) -> Result<(), ReportError> {
        if self.version != REPORT_VERSION {
            return Err(ReportError::Version(self.version));
        }
        if self.free_disk_bytes > self.disk_capacity_bytes {
            return Err(ReportError::DiskAccounting);
        }
        if !(self.lighthouse_interval_s.is_finite() && self.lighthouse_interval_s > 0.0) {
            return Err(ReportError::Interval);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub received_ts: Timestamp,
    pub report: StatusReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaintenanceAction {
    DriveSwap,
    Repair,
}

impl MaintenanceAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaintenanceAction::DriveSwap => "drive_swap",
            MaintenanceAction::Repair => "repair",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "drive_swap" => Some(MaintenanceAction::DriveSwap),
            "repair" => Some(MaintenanceAction::Repair),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceEvent {
    pub rider_id: u32,
    pub ts: Timestamp,
    pub action: MaintenanceAction,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeartbeatThresholds {
    /// A rider is stale once its last report is older than this many
    /// lighthouse intervals.
    pub staleness_multiplier: f64,
    /// Drive swap is needed below this fraction of free capacity.
    pub drive_swap_free_fraction: f64,
}

impl Default for HeartbeatThresholds {
    fn default() -> Self {
        HeartbeatThresholds { staleness_multiplier: 3.0, drive_swap_free_fraction: 0.10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthSummary {
    pub power_w: f64,
    pub temperatures: Temperatures,
    pub free_disk_bytes: u64,
    pub disk_capacity_bytes: u64,
    pub report_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiderStatus {
    pub rider_id: u32,
    pub last_report_ts: Timestamp,
    pub last_report_age_us: u64,
    pub lighthouse_interval_s: f64,
    pub stale: bool,
    pub needs_drive_swap: bool,
    pub last_trip: Option<String>,
    pub last_gps: Option<GpsFix>,
    pub health: HealthSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetStatus {
    pub generated_ts: Timestamp,
    pub riders: Vec<RiderStatus>,
}

fn low_disk(report: &StatusReport, t: &HeartbeatThresholds) -> bool {
    (report.free_disk_bytes as f64) < t.drive_swap_free_fraction * report.disk_capacity_bytes as f64
}

/// Fleet status as of `now`. Deterministic in its inputs.
///
/// The latest report of each rider (by receive time, then sequence) decides
/// the flags. A drive-swap maintenance event clears `needs_drive_swap` until a
/// low-disk report arrives after it.
pub fn heartbeat_snapshot(
    log: &[LogEntry],
    maintenance: &[MaintenanceEvent],
    thresholds: &HeartbeatThresholds,
    now: Timestamp,
) -> FleetStatus {
    let mut latest: BTreeMap<u32, (&LogEntry, u64)> = BTreeMap::new();
    for entry in log {
        let key = (entry.received_ts, entry.report.seq);
        latest
            .entry(entry.report.rider_id)
            .and_modify(|(best, count)| {
                *count += 1;
                if key >= (best.received_ts, best.report.seq) {
                    *best = entry;
                }
            })
            .or_insert((entry, 1));
    }
    let mut last_swap: BTreeMap<u32, Timestamp> = BTreeMap::new();
    for ev in maintenance.iter().filter(|e| e.action == MaintenanceAction::DriveSwap) {
        let slot = last_swap.entry(ev.rider_id).or_insert(ev.ts);
        *slot = (*slot).max(ev.ts);
    }

    let riders = latest
        .into_iter()
        .map(|(rider_id, (entry, count))| {
            let r = &entry.report;
            let age = now.micros_since(entry.received_ts);
            let stale = age as f64 > thresholds.staleness_multiplier * r.lighthouse_interval_s * 1e6;
            let swapped_since = last_swap.get(&rider_id).is_some_and(|&ts| ts >= entry.received_ts);
            RiderStatus {
                rider_id,
                last_report_ts: entry.received_ts,
                last_report_age_us: age,
                lighthouse_interval_s: r.lighthouse_interval_s,
                stale,
                needs_drive_swap: low_disk(r, thresholds) && !swapped_since,
                last_trip: r.trip.as_ref().map(|t| t.trip_id.clone()),
                last_gps: r.gps,
                health: HealthSummary {
                    power_w: r.power_w,
                    temperatures: r.temperatures,
                    free_disk_bytes: r.free_disk_bytes,
                    disk_capacity_bytes: r.disk_capacity_bytes,
                    report_count: count,
                },
            }
        })
        .collect();
    FleetStatus { generated_ts: now, riders }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("sequence {seq} not after last accepted {last}")]
pub struct ReplayDetected {
    pub seq: u64,
    pub last: u64,
}

/// Per-rider monotone sequence check.
#[derive(Debug, Clone, Default)]
pub struct ReplayGuard {
    last_seq: BTreeMap<u32, u64>,
}

impl ReplayGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_history(history: impl IntoIterator<Item = (u32, u64)>) -> Self {
        let mut g = ReplayGuard::new();
        for (rider, seq) in history {
            let slot = g.last_seq.entry(rider).or_insert(seq);
            *slot = (*slot).max(seq);
        }
        g
    }

    pub fn check(&self, rider_id: u32, seq: u64) -> Result<(), ReplayDetected> {
        match self.last_seq.get(&rider_id) {
            Some(&last) if seq <= last => Err(ReplayDetected { seq, last }),
            _ => Ok(()),
        }
    }

    pub fn accept(&mut self, rider_id: u32, seq: u64) -> Result<(), ReplayDetected> {
        self.check(rider_id, seq)?;
        self.last_seq.insert(rider_id, seq);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const MIN: u64 = 60_000_000;

    fn report(rider_id: u32, seq: u64, free: u64, capacity: u64) -> StatusReport {
        StatusReport {
            version: REPORT_VERSION,
            rider_id,
            seq,
            sent_ts: Timestamp::ZERO,
            trip: None,
            gps: None,
            power_w: 11.0,
            temperatures: Temperatures { external_c: 20.0, pmu_c: 35.0, hdd_c: 30.0 },
            free_disk_bytes: free,
            disk_capacity_bytes: capacity,
            lighthouse_interval_s: 60.0,
        }
    }

    fn entry(received: u64, report: StatusReport) -> LogEntry {
        LogEntry { received_ts: received.into(), report }
    }

    const TB: u64 = 1_000_000_000_000;
    const GB: u64 = 1_000_000_000;

    #[test]
    fn stale_after_three_intervals() {
        let log = vec![entry(0, report(1, 1, 400 * GB, TB))];
        let t = HeartbeatThresholds::default();
        let s = heartbeat_snapshot(&log, &[], &t, (10 * MIN).into());
        assert!(s.riders[0].stale);
        let s = heartbeat_snapshot(&log, &[], &t, (3 * MIN).into());
        assert!(!s.riders[0].stale);
    }

    #[test]
    fn low_disk_needs_swap() {
        let log = vec![entry(0, report(1, 1, 50 * GB, TB))];
        let s = heartbeat_snapshot(&log, &[], &HeartbeatThresholds::default(), 1.into());
        assert!(s.riders[0].needs_drive_swap);
    }

    #[test]
    fn fresh_healthy_rider_has_no_flags() {
        let log = vec![entry(0, report(1, 1, 400 * GB, TB))];
        let s = heartbeat_snapshot(&log, &[], &HeartbeatThresholds::default(), MIN.into());
        assert!(!s.riders[0].stale && !s.riders[0].needs_drive_swap);
    }

    #[test]
    fn drive_swap_clears_until_next_low_report() {
        let t = HeartbeatThresholds::default();
        let mut log = vec![entry(0, report(1, 1, 50 * GB, TB))];
        let swap = MaintenanceEvent { rider_id: 1, ts: 10.into(), action: MaintenanceAction::DriveSwap, note: String::new() };
        let repair = MaintenanceEvent { rider_id: 1, ts: 10.into(), action: MaintenanceAction::Repair, note: String::new() };
        assert!(heartbeat_snapshot(&log, &[repair], &t, 20.into()).riders[0].needs_drive_swap);
        assert!(!heartbeat_snapshot(&log, std::slice::from_ref(&swap), &t, 20.into()).riders[0].needs_drive_swap);
        log.push(entry(30, report(1, 2, 40 * GB, TB)));
        assert!(heartbeat_snapshot(&log, &[swap], &t, 40.into()).riders[0].needs_drive_swap);
    }

    #[test]
    fn snapshot_is_deterministic_and_sorted() {
        let log = vec![
            entry(5, report(9, 1, 10, 100)),
            entry(3, report(2, 1, 90, 100)),
            entry(7, report(2, 2, 80, 100)),
        ];
        let t = HeartbeatThresholds::default();
        let a = heartbeat_snapshot(&log, &[], &t, 100.into());
        assert_eq!(a, heartbeat_snapshot(&log, &[], &t, 100.into()));
        assert_eq!(a.riders.iter().map(|r| r.rider_id).collect::<Vec<_>>(), vec![2, 9]);
        assert_eq!(a.riders[0].health.report_count, 2);
        assert_eq!(a.riders[0].health.free_disk_bytes, 80);
    }

    #[test]
    fn replay_guard() {
        let mut g = ReplayGuard::with_history([(1, 5)]);
        assert!(g.accept(1, 5).is_err());
        assert!(g.accept(1, 6).is_ok());
        assert!(g.accept(1, 6).is_err());
        assert!(g.accept(2, 0).is_ok());
    }

    #[test]
    fn report_validation() {
        assert!(report(1, 1, 10, 100).validate().is_ok());
        assert_eq!(report(1, 1, 101, 100).validate(), Err(ReportError::DiskAccounting));
        let mut r = report(1, 1, 1, 1);
        r.lighthouse_interval_s = 0.0;
        assert_eq!(r.validate(), Err(ReportError::Interval));
    }
}
