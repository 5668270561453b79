//! Offload, clean, filter and synchronize trips.

pub mod clean;
pub mod filter;
pub mod sync;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use avt_core::can::SignalError;
use avt_core::sim::default_decode_table;
use avt_core::sync::SyncError;
use avt_core::{DecodeTable, TripId};

use crate::formats::FormatError;
use crate::layout::LayoutError;

pub use clean::{clean_trip, CleanContext, CleanReport};
pub use filter::{filter_trip, gather_facts, quarantine_trip};
pub use sync::{synchronize_trip, SyncOutput};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub table: DecodeTable,
    /// Decoded signal holding vehicle speed in m/s.
    pub speed_signal: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { table: default_decode_table(), speed_signal: "speed".into() }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("missing {0}")]
    MissingFile(PathBuf),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Decode(#[from] SignalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}

/// Trip directories directly under `root`, recognised by their names.
pub fn trip_dirs(root: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
        .filter(|e| e.file_name().to_str().is_some_and(|n| n.parse::<TripId>().is_ok()))
        .map(|e| e.path())
        .collect();
    out.sort();
    Ok(out)
}

/// Copies trips from a logger drive to central storage, skipping trips
/// already there or still being recorded. Returns the copied destinations.
pub fn offload_trips(drive: &Path, raw_root: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(raw_root).map_err(|e| PipelineError::io(raw_root, e))?;
    let mut copied = Vec::new();
    for src in trip_dirs(drive).map_err(|e| PipelineError::io(drive, e))? {
        if src.join(".recording").exists() {
            continue;
        }
        let dst = raw_root.join(src.file_name().expect("named"));
        if dst.exists() {
            continue;
        }
        let staging = raw_root.join(format!(".{}.partial", dst.file_name().expect("named").to_string_lossy()));
        let _ = fs::remove_dir_all(&staging);
        filter::copy_tree(&src, &staging).map_err(|e| PipelineError::io(&staging, e))?;
        fs::rename(&staging, &dst).map_err(|e| PipelineError::io(&dst, e))?;
        copied.push(dst);
    }
    Ok(copied)
}
