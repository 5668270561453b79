//! Reading recorded rows back out of a trip directory.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use avt_core::sim::{GpsSample, ImuSample};
use avt_core::sync::FrameStamp;
use avt_core::trip::Span;
use avt_core::{CanFrame, Timestamp, TripSpecs};

use crate::formats::{self, FormatError, Parsed, FRAME_HEADER, GPS_HEADER, IMU_HEADER};
use crate::layout::TripLayout;

fn optional<T>(r: Result<Parsed<T>, FormatError>) -> Result<Option<Parsed<T>>, FormatError> {
    match r {
        Ok(p) => Ok(Some(p)),
        Err(FormatError::UnreadableFile { source, .. }) if source.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

/// Frame rows of one camera; `None` if the CSV does not exist.
pub fn camera_frames(layout: &TripLayout, camera: &str) -> Result<Option<Parsed<FrameStamp>>, FormatError> {
    optional(formats::read_csv(&layout.camera_csv(camera), FRAME_HEADER, formats::parse_frame_record))
}

pub fn can_frames(layout: &TripLayout) -> Result<Option<Parsed<CanFrame>>, FormatError> {
    optional(formats::parse_raw_can_csv(&layout.can_csv()))
}

pub fn gps_samples(layout: &TripLayout) -> Result<Option<Parsed<GpsSample>>, FormatError> {
    optional(formats::read_csv(&layout.gps_csv(), GPS_HEADER, formats::parse_gps_record))
}

pub fn imu_samples(layout: &TripLayout) -> Result<Option<Parsed<ImuSample>>, FormatError> {
    optional(formats::read_csv(&layout.imu_csv(), IMU_HEADER, formats::parse_imu_record))
}

fn span_of(ts: impl Iterator<Item = Timestamp>) -> Option<Span> {
    let (mut lo, mut hi) = (None::<Timestamp>, None::<Timestamp>);
    for t in ts {
        lo = Some(lo.map_or(t, |l| l.min(t)));
        hi = Some(hi.map_or(t, |h| h.max(t)));
    }
    Span::new(lo?, hi?)
}

/// Per-subsystem min/max of the valid row timestamps of every timestamped
/// file present. Audio has no timestamps and is not included.
pub fn row_spans(layout: &TripLayout) -> Result<BTreeMap<String, Span>, FormatError> {
    let mut spans = BTreeMap::new();
    for cam in layout.cameras() {
        if let Some(span) = camera_frames(layout, &cam)?.and_then(|p| span_of(p.rows.iter().map(|f| f.ts))) {
            spans.insert(cam, span);
        }
    }
    if let Some(span) = can_frames(layout)?.and_then(|p| span_of(p.rows.iter().map(|f| f.ts))) {
        spans.insert("can".into(), span);
    }
    if let Some(span) = gps_samples(layout)?.and_then(|p| span_of(p.rows.iter().map(|s| s.ts))) {
        spans.insert("gps".into(), span);
    }
    if let Some(span) = imu_samples(layout)?.and_then(|p| span_of(p.rows.iter().map(|s| s.ts))) {
        spans.insert("imu".into(), span);
    }
    Ok(spans)
}

/// Trip specs rebuilt from row timestamps; `None` when no file has rows.
pub fn specs_from_rows(layout: &TripLayout) -> Result<Option<TripSpecs>, FormatError> {
    Ok(TripSpecs::from_subsystems(row_spans(layout)?).ok())
}

/// Sum of the sizes of all regular files, skipping hidden entries.
pub fn data_bytes(dir: &Path) -> io::Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_name().to_string_lossy().starts_with('.') {
            continue;
        }
        let ty = entry.file_type()?;
        if ty.is_dir() {
            total += data_bytes(&entry.path())?;
        } else if ty.is_file() {
            total += entry.metadata()?.len();
        }
    }
    Ok(total)
}
