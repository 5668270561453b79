//! Device side: build, seal and send periodic status reports.

use std::path::Path;
use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use avt_core::health::{GpsFix, StatusReport, Temperatures, TripTiming, REPORT_VERSION};
use avt_core::{Timestamp, TripId};

use super::homebase::frame;
use super::{seal_report, KeyPair, Reject, SealError, KEY_LEN};
use crate::formats::{self, DIAGNOSTICS_HEADER};
use crate::layout::TripLayout;
use crate::scan;

/// Instantaneous device state that goes into a report.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSnapshot {
    pub trip: Option<TripTiming>,
    pub gps: Option<GpsFix>,
    pub power_w: f64,
    pub temperatures: Temperatures,
    pub free_disk_bytes: u64,
}

/// Latest state recorded in a trip directory: the last value of each
/// diagnostics key and the last GPS fix.
pub fn snapshot_from_trip(dir: &Path, now: Timestamp) -> anyhow::Result<DeviceSnapshot> {
    let layout = TripLayout::new(dir);
    let diag = formats::read_csv(&layout.diagnostics(), DIAGNOSTICS_HEADER, formats::parse_diagnostic_record)?;
    let last = |key: &str| -> Option<f64> {
        diag.rows.iter().filter(|r| r.key == key).max_by_key(|r| r.ts).and_then(|r| r.value.parse().ok())
    };
    let gps = scan::gps_samples(&layout)
        .ok()
        .flatten()
        .and_then(|p| p.rows.into_iter().max_by_key(|s| s.ts))
        .map(|s| GpsFix { lat: s.latitude, lon: s.longitude });
    let trip = layout.name().parse::<TripId>().ok().map(|id| TripTiming {
        trip_id: id.to_string(),
        start_ts: id.start_ts(),
        elapsed_us: now.micros_since(id.start_ts()),
    });
    Ok(DeviceSnapshot {
        trip,
        gps,
        power_w: last("power_w").unwrap_or(0.0),
        temperatures: Temperatures {
            external_c: last("external_temp_c").unwrap_or(0.0),
            pmu_c: last("pmu_temp_c").unwrap_or(0.0),
            hdd_c: last("hdd_temp_c").unwrap_or(0.0),
        },
        free_disk_bytes: last("free_disk_bytes").map_or(0, |v| v as u64),
    })
}

pub struct Lighthouse {
    pub rider_id: u32,
    keys: KeyPair,
    server_public: [u8; KEY_LEN],
    pub interval_s: f64,
    pub disk_capacity_bytes: u64,
    last_seq: u64,
}

impl Lighthouse {
    pub fn new(rider_id: u32, keys: KeyPair, server_public: [u8; KEY_LEN], interval_s: f64, disk_capacity_bytes: u64) -> Self {
        Lighthouse { rider_id, keys, server_public, interval_s, disk_capacity_bytes, last_seq: 0 }
    }

    /// Sequence numbers start from the clock so they keep increasing across
    /// restarts without any stored state.
    pub fn next_report(&mut self, snap: DeviceSnapshot, now: Timestamp) -> StatusReport {
        self.last_seq = (self.last_seq + 1).max(now.as_micros());
        StatusReport {
            version: REPORT_VERSION,
            rider_id: self.rider_id,
            seq: self.last_seq,
            sent_ts: now,
            trip: snap.trip,
            gps: snap.gps,
            power_w: snap.power_w,
            temperatures: snap.temperatures,
            free_disk_bytes: snap.free_disk_bytes,
            disk_capacity_bytes: self.disk_capacity_bytes,
            lighthouse_interval_s: self.interval_s,
        }
    }

    pub fn seal(&self, report: &StatusReport) -> Result<Vec<u8>, SealError> {
        seal_report(report, &self.keys.secret, &self.server_public)
    }

    pub fn interval(&self) -> Duration {
        Duration::from_secs_f64(self.interval_s.max(0.001))
    }
}

/// Sends one envelope over an open connection and waits for the reply.
pub async fn send_envelope(stream: &mut TcpStream, envelope: &[u8]) -> std::io::Result<Result<(), Reject>> {
    stream.write_all(&frame(envelope)).await?;
    let mut code = [0u8; 1];
    stream.read_exact(&mut code).await?;
    Ok(match code[0] {
        0 => Ok(()),
        c => Err(Reject::from_code(c).unwrap_or(Reject::MalformedReport)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn snap() -> DeviceSnapshot {
        DeviceSnapshot {
            trip: None,
            gps: None,
            power_w: 1.0,
            temperatures: Temperatures { external_c: 1.0, pmu_c: 2.0, hdd_c: 3.0 },
            free_disk_bytes: 4,
        }
    }

    #[test]
    fn sequence_is_strictly_increasing() {
        let mut lh = Lighthouse::new(3, KeyPair::generate(), KeyPair::generate().public, 60.0, 1000);
        let a = lh.next_report(snap(), Timestamp::from_micros(100));
        let b = lh.next_report(snap(), Timestamp::from_micros(100));
        let c = lh.next_report(snap(), Timestamp::from_micros(50));
        assert!(a.seq < b.seq && b.seq < c.seq);
        assert!(a.validate().is_ok());
    }

    #[test]
    fn snapshot_reads_last_values() {
        let dir = tempfile::tempdir().unwrap();
        let trip = dir.path().join("4_20160601_1464739200000000");
        fs::create_dir(&trip).unwrap();
        fs::write(
            trip.join("trip_diagnostics.log"),
            "ts_micro,key,value\n1,power_w,10\n3,power_w,12.5\n2,power_w,11\n3,free_disk_bytes,77\n3,hdd_temp_c,40\n",
        )
        .unwrap();
        fs::write(
            trip.join("data_gps.csv"),
            "ts_micro,latitude,longitude,altitude,speed,track,climb\n5,42.1,-71.2,0,0,0,0\n9,42.2,-71.3,0,0,0,0\n",
        )
        .unwrap();
        let now = Timestamp::from_micros(1_464_739_200_000_000 + 5_000_000);
        let s = snapshot_from_trip(&trip, now).unwrap();
        assert_eq!(s.power_w, 12.5);
        assert_eq!(s.free_disk_bytes, 77);
        assert_eq!(s.temperatures.hdd_c, 40.0);
        assert_eq!(s.gps, Some(GpsFix { lat: 42.2, lon: -71.3 }));
        let t = s.trip.unwrap();
        assert_eq!(t.elapsed_us, 5_000_000);
        assert_eq!(t.trip_id, "4_20160601_1464739200000000");
    }
}
