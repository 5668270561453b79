//! Distance integration, geodesy helpers and fleet-level counts.

use alloc::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::time::{Timestamp, MICROS_PER_SECOND};

pub const METERS_PER_MILE: f64 = 1609.344;
/// Mean Earth radius.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = libm::pow(libm::sin(dp / 2.0), 2.0)
        + libm::cos(p1) * libm::cos(p2) * libm::pow(libm::sin(dl / 2.0), 2.0);
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.min(1.0)))
}

/// Point reached from `start` after `distance_m` along initial bearing
/// `bearing_deg` on a great circle.
pub fn destination(start: GeoPoint, bearing_deg: f64, distance_m: f64) -> GeoPoint {
    let d = distance_m / EARTH_RADIUS_M;
    let th = bearing_deg.to_radians();
    let p1 = start.lat.to_radians();
    let l1 = start.lon.to_radians();
    let p2 = libm::asin(libm::sin(p1) * libm::cos(d) + libm::cos(p1) * libm::sin(d) * libm::cos(th));
    let l2 = l1
        + libm::atan2(
            libm::sin(th) * libm::sin(d) * libm::cos(p1),
            libm::cos(d) - libm::sin(p1) * libm::sin(p2),
        );
    GeoPoint { lat: p2.to_degrees(), lon: l2.to_degrees() }
}

/// Sum of speed × slot gap: each slot's speed holds until the next slot.
/// Empty cells contribute nothing.
pub fn integrate_slot_speed(slots: &[Timestamp], speed_mps: &[Option<f64>]) -> f64 {
    slots
        .windows(2)
        .zip(speed_mps)
        .filter_map(|(w, v)| v.map(|v| v * w[1].micros_since(w[0]) as f64 / MICROS_PER_SECOND as f64))
        .sum()
}

/// Length of a GPS track as the sum of consecutive great-circle legs.
pub fn track_length_m(points: &[GeoPoint]) -> f64 {
    points.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}

/// Per-trip values the fleet statistics are built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripMeasures {
    pub vehicle_id: u32,
    pub subject_id: u32,
    pub date: NaiveDate,
    pub distance_m: f64,
    pub frame_count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FleetStats {
    /// Distinct (vehicle, UTC date) pairs with at least one trip.
    pub participant_days: u64,
    pub miles: f64,
    pub frame_count: u64,
    pub trip_count: u64,
    pub driver_count: u64,
    pub vehicle_count: u64,
}

impl FleetStats {
    pub fn from_trips(trips: &[TripMeasures]) -> Self {
        let days: BTreeSet<(u32, NaiveDate)> = trips.iter().map(|t| (t.vehicle_id, t.date)).collect();
        let drivers: BTreeSet<u32> = trips.iter().map(|t| t.subject_id).collect();
        let vehicles: BTreeSet<u32> = trips.iter().map(|t| t.vehicle_id).collect();
        let meters: f64 = trips.iter().map(|t| t.distance_m).sum();
        FleetStats {
            participant_days: days.len() as u64,
            miles: meters / METERS_PER_MILE,
            frame_count: trips.iter().map(|t| t.frame_count).sum(),
            trip_count: trips.len() as u64,
            driver_count: drivers.len() as u64,
            vehicle_count: vehicles.len() as u64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sync::SyncGrid;
    use alloc::vec;

    #[test]
    fn constant_speed_hour_is_44_739_miles() {
        // closed form: 20 m/s * 3600 s = 72 km
        let closed_form_miles: f64 = 20.0 * 3600.0 / 1609.344;
        assert!((closed_form_miles - 44.739).abs() < 0.001);
        let grid = SyncGrid::spanning(Timestamp::ZERO, Timestamp::from_micros(3_600_000_000));
        let speeds = vec![Some(20.0); grid.len()];
        let miles = integrate_slot_speed(grid.slots(), &speeds) / METERS_PER_MILE;
        assert!((miles - closed_form_miles).abs() <= 0.01, "{miles}");
    }

    #[test]
    fn empty_cells_contribute_nothing() {
        let slots = [0.into(), 1_000_000.into(), 2_000_000.into()];
        assert_eq!(integrate_slot_speed(&slots, &[None, Some(3.0), Some(100.0)]), 3.0);
    }

    #[test]
    fn destination_and_haversine_agree() {
        let start = GeoPoint { lat: 42.36, lon: -71.09 };
        for bearing in [0.0, 45.0, 133.0, 270.0] {
            let end = destination(start, bearing, 12_345.0);
            assert!((haversine_m(start, end) - 12_345.0).abs() < 1e-3);
        }
    }

    #[test]
    fn fleet_counts() {
        let d = |day| NaiveDate::from_ymd_opt(2016, 7, day).unwrap();
        let trips = vec![
            TripMeasures { vehicle_id: 1, subject_id: 1, date: d(26), distance_m: 1609.344, frame_count: 900 },
            TripMeasures { vehicle_id: 1, subject_id: 1, date: d(26), distance_m: 0.0, frame_count: 0 },
            TripMeasures { vehicle_id: 1, subject_id: 2, date: d(27), distance_m: 1609.344, frame_count: 1800 },
        ];
        let s = FleetStats::from_trips(&trips);
        assert_eq!(s.participant_days, 2);
        assert_eq!(s.frame_count, 2700);
        assert_eq!(s.trip_count, 3);
        assert_eq!(s.driver_count, 2);
        assert_eq!(s.vehicle_count, 1);
        assert!((s.miles - 2.0).abs() < 1e-12);
        assert_eq!(FleetStats::from_trips(&[]), FleetStats::default());
    }
}
