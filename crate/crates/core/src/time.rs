use core::fmt;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

pub const MICROS_PER_SECOND: u64 = 1_000_000;

/// Microseconds since the Unix epoch, UTC.
///
/// This is the only time representation shared between subsystems; every CSV
/// row, trip name and telemetry report carries it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_micros(micros: u64) -> Self {
        Timestamp(micros)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp(libm::round(secs * MICROS_PER_SECOND as f64) as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SECOND as f64
    }

    /// UTC calendar date, or `None` when the value is outside chrono's range.
    pub fn utc_date(self) -> Option<NaiveDate> {
        let micros = i64::try_from(self.0).ok()?;
        DateTime::from_timestamp_micros(micros).map(|dt| dt.date_naive())
    }

    pub const fn saturating_add_micros(self, micros: u64) -> Self {
        Timestamp(self.0.saturating_add(micros))
    }

    pub const fn saturating_sub_micros(self, micros: u64) -> Self {
        Timestamp(self.0.saturating_sub(micros))
    }

    /// Microseconds from `earlier` to `self`, zero if `earlier` is later.
    pub const fn micros_since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }

    /// Absolute distance in microseconds.
    pub const fn abs_diff(self, other: Timestamp) -> u64 {
        self.0.abs_diff(other.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for Timestamp {
    fn from(micros: u64) -> Self {
        Timestamp(micros)
    }
}
