//! The 30 fps master timeline and per-slot assignment of camera frames and
//! CAN values.
//!
//! Frames are assigned latest-at-or-before, so a slot never shows a frame
//! captured after it; slower cameras repeat frames. CAN values are assigned
//! nearest-in-time with ties going to the earlier point.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::can::SignalTimeline;
use crate::time::{Timestamp, MICROS_PER_SECOND};

pub const SYNC_FPS: u64 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyncError {
    #[error("no cameras to synchronize")]
    NoCameras,
    #[error("camera {0} has no frames")]
    EmptyCamera(usize),
    #[error("camera {0} timestamps are not strictly increasing")]
    UnsortedFrames(usize),
    #[error("cameras do not overlap: latest start {latest_start} after earliest end {earliest_end}")]
    EmptyOverlap { latest_start: Timestamp, earliest_end: Timestamp },
    #[error("camera has no frame at or before grid start {0}")]
    NoFrameBefore(Timestamp),
}

/// Offset of slot `k` from the grid start: `floor(k * 10^6 / 30)` µs.
pub fn slot_offset_us(k: u64) -> u64 {
    k * MICROS_PER_SECOND / SYNC_FPS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameStamp {
    pub frame: u64,
    pub ts: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncGrid {
    t0: Timestamp,
    slots: Vec<Timestamp>,
}

impl SyncGrid {
    pub fn t0(&self) -> Timestamp {
        self.t0
    }

    pub fn slots(&self) -> &[Timestamp] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Slots from `t0` up to `end` inclusive.
    pub fn spanning(t0: Timestamp, end: Timestamp) -> Self {
        let slots = (0..)
            .map(|k| t0.saturating_add_micros(slot_offset_us(k)))
            .take_while(|&ts| ts <= end)
            .collect();
        SyncGrid { t0, slots }
    }
}

fn check_camera(index: usize, frames: &[FrameStamp]) -> Result<(Timestamp, Timestamp), SyncError> {
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        return Err(SyncError::EmptyCamera(index));
    };
    if frames.windows(2).any(|w| w[1].ts <= w[0].ts) {
        return Err(SyncError::UnsortedFrames(index));
    }
    Ok((first.ts, last.ts))
}

/// Grid from the latest camera start to the earliest camera end.
pub fn build_sync_grid(cameras: &[&[FrameStamp]]) -> Result<SyncGrid, SyncError> {
    if cameras.is_empty() {
        return Err(SyncError::NoCameras);
    }
    let mut latest_start = Timestamp::ZERO;
    let mut earliest_end = Timestamp::from_micros(u64::MAX);
    for (i, frames) in cameras.iter().enumerate() {
        let (first, last) = check_camera(i, frames)?;
        latest_start = latest_start.max(first);
        earliest_end = earliest_end.min(last);
    }
    if latest_start > earliest_end {
        return Err(SyncError::EmptyOverlap { latest_start, earliest_end });
    }
    Ok(SyncGrid::spanning(latest_start, earliest_end))
}

/// For every slot, the id of the latest frame at or before the slot time.
/// `frames` must be sorted by time.
pub fn assign_frames(grid: &SyncGrid, frames: &[FrameStamp]) -> Result<Vec<u64>, SyncError> {
    match frames.first() {
        Some(first) if first.ts <= grid.t0 => {}
        _ => return Err(SyncError::NoFrameBefore(grid.t0)),
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut i = 0;
    for &slot in &grid.slots {
        while i + 1 < frames.len() && frames[i + 1].ts <= slot {
            i += 1;
        }
        out.push(frames[i].frame);
    }
    Ok(out)
}

/// Index of the point nearest to `ts`, earliest on ties; `points` sorted.
fn nearest(points: &[(Timestamp, f64)], ts: Timestamp) -> Option<usize> {
    if points.is_empty() {
        return None;
    }
    // First point strictly after ts; the candidates are it and the first point
    // sharing the timestamp of its predecessor.
    let after = points.partition_point(|&(p, _)| p <= ts);
    let before = after.checked_sub(1).map(|b| {
        let t = points[b].0;
        points[..=b].partition_point(|&(p, _)| p < t)
    });
    match (before, points.get(after)) {
        (Some(b), Some(&(ta, _))) => {
            if ts.abs_diff(points[b].0) <= ts.abs_diff(ta) {
                Some(b)
            } else {
                Some(after)
            }
        }
        (Some(b), None) => Some(b),
        (None, Some(_)) => Some(after),
        (None, None) => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncedColumn {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

/// One column per signal with the nearest decoded value for each slot;
/// signals without points give empty cells.
pub fn sync_can(grid: &SyncGrid, timeline: &SignalTimeline) -> Vec<SyncedColumn> {
    timeline
        .series
        .iter()
        .map(|series| SyncedColumn {
            name: series.name.clone(),
            values: grid
                .slots
                .iter()
                .map(|&slot| nearest(&series.points, slot).map(|i| series.points[i].1))
                .collect(),
        })
        .collect()
}

/// Maximal runs of `true` as inclusive `(start_slot, end_slot)` ranges.
pub fn extract_epochs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &flag) in flags.iter().enumerate() {
        match (flag, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len() - 1));
    }
    out
}

/// A slot counts as "on" when its synced value is present and non-zero.
pub fn flags_from_values(values: &[Option<f64>]) -> Vec<bool> {
    values.iter().map(|v| matches!(v, Some(x) if *x != 0.0)).collect()
}
