//! Keep/remove decision for a cleaned trip, and quarantine of removed ones.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use avt_core::can::decode_trip;
use avt_core::filter::{decide, FilterDecision, FilterPolicy, TripFacts};
use avt_core::{SubsystemKind, TripSpecs};

use super::{PipelineConfig, PipelineError};
use crate::formats;
use crate::layout::{validate_layout, TripLayout};
use crate::scan;

fn specs_or_rows(layout: &TripLayout) -> Result<Option<TripSpecs>, PipelineError> {
    match formats::read_specs(&layout.specs()) {
        Ok(s) => Ok(Some(s)),
        Err(_) => Ok(scan::specs_from_rows(layout)?),
    }
}

/// Everything the filter looks at, read from the trip directory.
pub fn gather_facts(dir: &Path, cfg: &PipelineConfig) -> Result<TripFacts, PipelineError> {
    let report = validate_layout(dir)?;
    let layout = TripLayout::new(dir);
    let mut facts = TripFacts { name: layout.name(), missing_essential: !report.valid, ..TripFacts::default() };

    facts.subject_id = layout.load_dacman().ok().map(|c| c.subject_id);
    let specs = specs_or_rows(&layout)?;
    facts.span = specs.as_ref().map(|s| (s.trip.start_ts_micro, s.trip.end_ts_micro));

    if let Ok(Some(can)) = scan::can_frames(&layout) {
        if let Ok(timeline) = decode_trip(&can.rows, &cfg.table) {
            facts.max_speed_mps = timeline
                .get(&cfg.speed_signal)
                .and_then(|points| points.iter().map(|p| p.1).reduce(f64::max));
        }
    }

    facts.total_bytes = scan::data_bytes(dir).map_err(|e| PipelineError::io(dir, e))?;

    let cameras = layout.cameras();
    let mut durations = Some(Vec::new());
    for cam in &cameras {
        let frames = scan::camera_frames(&layout, cam).ok().flatten();
        let span = frames.and_then(|p| {
            let lo = p.rows.iter().map(|f| f.ts).min()?;
            let hi = p.rows.iter().map(|f| f.ts).max()?;
            Some(hi.micros_since(lo))
        });
        match (span, durations.as_mut()) {
            (Some(d), Some(v)) => v.push(d),
            _ => durations = None,
        }
    }
    facts.camera_durations_us = durations;

    for cam in &cameras {
        facts.essential_error_files.push(formats::error_file_stats(&layout.camera_error(cam)).map_err(|e| PipelineError::io(dir, e))?);
    }
    facts.essential_error_files.push(formats::error_file_stats(&layout.error_file("can")).map_err(|e| PipelineError::io(dir, e))?);

    if let Some(specs) = &specs {
        for (name, span) in &specs.subsystems {
            facts.all_ends.push(span.end_ts_micro);
            if SubsystemKind::from_name(name).is_essential() {
                facts.essential_ends.push(span.end_ts_micro);
            }
        }
    }
    Ok(facts)
}

pub fn filter_trip(dir: &Path, policy: &FilterPolicy, cfg: &PipelineConfig) -> Result<FilterDecision, PipelineError> {
    Ok(decide(&gather_facts(dir, cfg)?, policy))
}

/// Moves a removed trip under `quarantine_root`; nothing is deleted.
pub fn quarantine_trip(dir: &Path, quarantine_root: &Path) -> Result<PathBuf, PipelineError> {
    let name = dir.file_name().ok_or_else(|| PipelineError::io(dir, io::Error::from(io::ErrorKind::InvalidInput)))?;
    fs::create_dir_all(quarantine_root).map_err(|e| PipelineError::io(quarantine_root, e))?;
    let dst = quarantine_root.join(name);
    if dst.exists() {
        return Err(PipelineError::io(&dst, io::Error::from(io::ErrorKind::AlreadyExists)));
    }
    match fs::rename(dir, &dst) {
        Ok(()) => Ok(dst),
        Err(_) => {
            copy_tree(dir, &dst).map_err(|e| PipelineError::io(&dst, e))?;
            fs::remove_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
            Ok(dst)
        }
    }
}

pub(crate) fn copy_tree(src: &Path, dst: &Path) -> io::Result<()> {
    fs::create_dir_all(dst)?;
    for entry in fs::read_dir(src)? {
        let entry = entry?;
        let target = dst.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}
