//! Writes the synchronized video and CAN tables of a trip.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use avt_core::can::decode_trip;
use avt_core::sync::{assign_frames, build_sync_grid, sync_can, FrameStamp, SyncError, SyncGrid, SyncedColumn};
use avt_core::DecodeTable;

use super::PipelineError;
use crate::layout::{TripLayout, SYNCED_CAN_FILE, SYNCED_VIDEO_FILE};
use crate::scan;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncOutput {
    pub dir: PathBuf,
    pub slots: usize,
    pub cameras: Vec<String>,
    pub signals: Vec<String>,
}

/// Everything that goes into the two synced tables, before formatting.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncedTrip {
    pub grid: SyncGrid,
    pub cameras: Vec<(String, Vec<u64>)>,
    pub signals: Vec<SyncedColumn>,
}

pub fn compute_sync(layout: &TripLayout, table: &DecodeTable) -> Result<SyncedTrip, PipelineError> {
    let cameras = layout.cameras();
    if cameras.is_empty() {
        return Err(PipelineError::Sync(SyncError::NoCameras));
    }
    let mut frames: Vec<Vec<FrameStamp>> = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let parsed = scan::camera_frames(layout, cam)?.ok_or_else(|| PipelineError::MissingFile(layout.camera_csv(cam)))?;
        frames.push(parsed.rows);
    }
    let refs: Vec<&[FrameStamp]> = frames.iter().map(Vec::as_slice).collect();
    let grid = build_sync_grid(&refs)?;
    let assigned = cameras
        .iter()
        .zip(&frames)
        .map(|(name, f)| Ok((name.clone(), assign_frames(&grid, f)?)))
        .collect::<Result<Vec<_>, SyncError>>()?;

    let can = scan::can_frames(layout)?.map(|p| p.rows).unwrap_or_default();
    let mut timeline = decode_trip(&can, table)?;
    for series in &mut timeline.series {
        series.points.sort_by_key(|p| p.0);
    }
    let signals = sync_can(&grid, &timeline);
    Ok(SyncedTrip { grid, cameras: assigned, signals })
}

pub fn render_synced_video(s: &SyncedTrip) -> String {
    let mut out = String::from("slot,ts_micro");
    for (name, _) in &s.cameras {
        let _ = write!(out, ",{name}_frame");
    }
    out.push('\n');
    for (k, ts) in s.grid.slots().iter().enumerate() {
        let _ = write!(out, "{k},{ts}");
        for (_, ids) in &s.cameras {
            let _ = write!(out, ",{}", ids[k]);
        }
        out.push('\n');
    }
    out
}

pub fn render_synced_can(s: &SyncedTrip) -> String {
    let mut out = String::from("slot,ts_micro");
    for col in &s.signals {
        let _ = write!(out, ",{}", col.name);
    }
    out.push('\n');
    for (k, ts) in s.grid.slots().iter().enumerate() {
        let _ = write!(out, "{k},{ts}");
        for col in &s.signals {
            match col.values[k] {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

fn write_if_changed(path: &Path, contents: &str) -> std::io::Result<()> {
    if fs::read_to_string(path).ok().as_deref() == Some(contents) {
        return Ok(());
    }
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Writes `synced_video.csv` and `synced_can.csv` to
/// `<processed_root>/<trip name>/`. Nothing is written unless both tables
/// could be computed; re-running on unchanged input rewrites nothing.
pub fn synchronize_trip(dir: &Path, table: &DecodeTable, processed_root: &Path) -> Result<SyncOutput, PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::NotADirectory(dir.to_path_buf()));
    }
    let layout = TripLayout::new(dir);
    let synced = compute_sync(&layout, table)?;
    let video = render_synced_video(&synced);
    let can = render_synced_can(&synced);

    let out_dir = processed_root.join(layout.name());
    fs::create_dir_all(&out_dir).map_err(|e| PipelineError::io(&out_dir, e))?;
    write_if_changed(&out_dir.join(SYNCED_VIDEO_FILE), &video).map_err(|e| PipelineError::io(&out_dir, e))?;
    write_if_changed(&out_dir.join(SYNCED_CAN_FILE), &can).map_err(|e| PipelineError::io(&out_dir, e))?;
    Ok(SyncOutput {
        dir: out_dir,
        slots: synced.grid.len(),
        cameras: synced.cameras.into_iter().map(|c| c.0).collect(),
        signals: synced.signals.into_iter().map(|c| c.name).collect(),
    })
}
