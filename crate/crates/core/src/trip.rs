//! Trip identity and the per-trip timing summary.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TripIdError {
    #[error("malformed trip name: {0}")]
    MalformedName(&'static str),
    #[error("date segment {segment} does not match UTC date of timestamp {ts}")]
    DateMismatch { segment: NaiveDate, ts: Timestamp },
}

/// `<rider_id>_<YYYYMMDD>_<ts_micro>`, with the date taken in UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripId {
    rider_id: u32,
    date: NaiveDate,
    start_ts: Timestamp,
}

impl TripId {
    pub fn new(rider_id: u32, start_ts: Timestamp) -> Result<Self, TripIdError> {
        if rider_id == 0 {
            return Err(TripIdError::MalformedName("rider id must be positive"));
        }
        let date = start_ts
            .utc_date()
            .ok_or(TripIdError::MalformedName("timestamp out of range"))?;
        Ok(TripId { rider_id, date, start_ts })
    }

    pub fn rider_id(&self) -> u32 {
        self.rider_id
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn start_ts(&self) -> Timestamp {
        self.start_ts
    }
}

impl fmt::Display for TripId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}_{:04}{:02}{:02}_{}",
            self.rider_id,
            self.date.year(),
            self.date.month(),
            self.date.day(),
            self.start_ts
        )
    }
}

// Canonical decimal: digits only, no leading zero unless the value is "0".
fn canonical_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'))
}

impl FromStr for TripId {
    type Err = TripIdError;

    fn from_str(name: &str) -> Result<Self, Self::Err> {
        let mut fields = name.split('_');
        let (Some(rider), Some(date), Some(ts), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(TripIdError::MalformedName("expected three underscore-separated fields"));
        };
        if !canonical_digits(rider) || !canonical_digits(ts) {
            return Err(TripIdError::MalformedName("rider id and timestamp must be decimal"));
        }
        if date.len() != 8 || !date.bytes().all(|b| b.is_ascii_digit()) {
            return Err(TripIdError::MalformedName("date must be YYYYMMDD"));
        }
        let rider_id: u32 = rider
            .parse()
            .map_err(|_| TripIdError::MalformedName("rider id out of range"))?;
        let start_ts = Timestamp::from_micros(
            ts.parse()
                .map_err(|_| TripIdError::MalformedName("timestamp out of range"))?,
        );
        let segment = NaiveDate::parse_from_str(date, "%Y%m%d")
            .map_err(|_| TripIdError::MalformedName("date is not a calendar date"))?;
        let id = TripId::new(rider_id, start_ts)?;
        if id.date != segment {
            return Err(TripIdError::DateMismatch { segment, ts: start_ts });
        }
        Ok(id)
    }
}

impl Serialize for TripId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TripId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <alloc::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One independently recorded stream of a trip.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubsystemKind {
    Camera(String),
    Can,
    Gps,
    Imu,
    Audio,
}

impl SubsystemKind {
    /// Cameras and CAN are essential: a trip without them is unusable.
    pub fn is_essential(&self) -> bool {
        matches!(self, SubsystemKind::Camera(_) | SubsystemKind::Can)
    }

    pub fn name(&self) -> &str {
        match self {
            SubsystemKind::Camera(name) => name,
            SubsystemKind::Can => "can",
            SubsystemKind::Gps => "gps",
            SubsystemKind::Imu => "imu",
            SubsystemKind::Audio => "audio",
        }
    }

    /// Inverse of [`SubsystemKind::name`]; any unreserved name is a camera.
    pub fn from_name(name: &str) -> Self {
        match name {
            "can" => SubsystemKind::Can,
            "gps" => SubsystemKind::Gps,
            "imu" => SubsystemKind::Imu,
            "audio" => SubsystemKind::Audio,
            other => SubsystemKind::Camera(other.to_string()),
        }
    }

    pub fn is_reserved_name(name: &str) -> bool {
        matches!(name, "can" | "gps" | "imu" | "audio")
    }
}

impl fmt::Display for SubsystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start_ts_micro: Timestamp,
    pub end_ts_micro: Timestamp,
}

impl Span {
    pub fn new(start: Timestamp, end: Timestamp) -> Option<Self> {
        (start <= end).then_some(Span { start_ts_micro: start, end_ts_micro: end })
    }

    pub fn duration_micros(&self) -> u64 {
        self.end_ts_micro.micros_since(self.start_ts_micro)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TripSpecsError {
    #[error("no subsystem spans")]
    Empty,
    #[error("subsystem {0} ends before it starts")]
    Inverted(String),
    #[error("trip span does not cover subsystem spans")]
    TripSpanMismatch,
}

/// Contents of `trip_specs.json`: trip span plus one span per subsystem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripSpecs {
    pub trip: Span,
    pub subsystems: BTreeMap<String, Span>,
}

impl TripSpecs {
    /// Builds specs whose trip span is the hull of the subsystem spans.
    pub fn from_subsystems(subsystems: BTreeMap<String, Span>) -> Result<Self, TripSpecsError> {
        for (name, span) in &subsystems {
            if span.start_ts_micro > span.end_ts_micro {
                return Err(TripSpecsError::Inverted(name.clone()));
            }
        }
        let start = subsystems.values().map(|s| s.start_ts_micro).min();
        let end = subsystems.values().map(|s| s.end_ts_micro).max();
        match (start, end) {
            (Some(start_ts_micro), Some(end_ts_micro)) => Ok(TripSpecs {
                trip: Span { start_ts_micro, end_ts_micro },
                subsystems,
            }),
            _ => Err(TripSpecsError::Empty),
        }
    }

    pub fn validate(&self) -> Result<(), TripSpecsError> {
        let rebuilt = TripSpecs::from_subsystems(self.subsystems.clone())?;
        if rebuilt.trip != self.trip {
            return Err(TripSpecsError::TripSpanMismatch);
        }
        Ok(())
    }

    /// Drops a subsystem and recomputes the trip span; `None` if none remain.
    pub fn without(&self, subsystem: &str) -> Option<TripSpecs> {
        let mut subsystems = self.subsystems.clone();
        subsystems.remove(subsystem);
        TripSpecs::from_subsystems(subsystems).ok()
    }
}
