//! Trip directory layout and its validation.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dacman::{valid_camera_name, DacmanConfig};
use crate::formats::{self, CAN_HEADER, FRAME_HEADER, GPS_HEADER, IMU_HEADER};

pub const DACMAN_FILE: &str = "trip_dacman.json";
pub const SPECS_FILE: &str = "trip_specs.json";
pub const DIAGNOSTICS_FILE: &str = "trip_diagnostics.log";
pub const CAN_FILE: &str = "data_can.csv";
pub const GPS_FILE: &str = "data_gps.csv";
pub const IMU_FILE: &str = "data_imu.csv";
pub const AUDIO_FILE: &str = "audio.raw";
pub const BACKUP_DIR: &str = ".backup";
pub const SYNCED_VIDEO_FILE: &str = "synced_video.csv";
pub const SYNCED_CAN_FILE: &str = "synced_can.csv";

/// Path arithmetic for one trip directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripLayout {
    root: PathBuf,
}

impl TripLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        TripLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// The directory's own name, which is the trip name.
    pub fn name(&self) -> String {
        self.root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }

    pub fn camera_dir(&self, camera: &str) -> PathBuf {
        self.root.join(camera)
    }
    pub fn camera_video(&self, camera: &str) -> PathBuf {
        self.root.join(camera).join(format!("{camera}.h264"))
    }
    pub fn camera_csv(&self, camera: &str) -> PathBuf {
        self.root.join(camera).join(format!("{camera}.csv"))
    }
    pub fn camera_error(&self, camera: &str) -> PathBuf {
        self.root.join(camera).join(format!("{camera}.error"))
    }
    pub fn can_csv(&self) -> PathBuf {
        self.root.join(CAN_FILE)
    }
    pub fn gps_csv(&self) -> PathBuf {
        self.root.join(GPS_FILE)
    }
    pub fn imu_csv(&self) -> PathBuf {
        self.root.join(IMU_FILE)
    }
    pub fn audio_raw(&self) -> PathBuf {
        self.root.join(AUDIO_FILE)
    }
    /// `can.error`, `gps.error`, ... for the non-camera subsystems.
    pub fn error_file(&self, subsystem: &str) -> PathBuf {
        self.root.join(format!("{subsystem}.error"))
    }
    pub fn dacman(&self) -> PathBuf {
        self.root.join(DACMAN_FILE)
    }
    pub fn specs(&self) -> PathBuf {
        self.root.join(SPECS_FILE)
    }
    pub fn diagnostics(&self) -> PathBuf {
        self.root.join(DIAGNOSTICS_FILE)
    }
    pub fn backup_dir(&self) -> PathBuf {
        self.root.join(BACKUP_DIR)
    }

    /// Data file of a non-camera subsystem.
    pub fn data_file(&self, subsystem: &str) -> Option<PathBuf> {
        match subsystem {
            "can" => Some(self.can_csv()),
            "gps" => Some(self.gps_csv()),
            "imu" => Some(self.imu_csv()),
            "audio" => Some(self.audio_raw()),
            _ => None,
        }
    }

    /// Cameras named by the config if it parses, otherwise the camera-like
    /// subdirectories present.
    pub fn cameras(&self) -> Vec<String> {
        if let Ok(cfg) = self.load_dacman() {
            return cfg.cameras.into_iter().map(|c| c.name).collect();
        }
        self.camera_dirs()
    }

    pub fn camera_dirs(&self) -> Vec<String> {
        let mut dirs: Vec<String> = fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| valid_camera_name(n))
            .collect();
        dirs.sort();
        dirs
    }

    /// Reads `trip_dacman.json` without validating it.
    pub fn load_dacman(&self) -> Result<DacmanConfig, crate::dacman::ConfigError> {
        let path = self.dacman();
        let text = fs::read_to_string(&path)
            .map_err(|source| crate::dacman::ConfigError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text)
            .map_err(|source| crate::dacman::ConfigError::Parse { path: path.display().to_string(), source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileRole {
    Essential,
    Nonessential,
    /// Error files, specs and diagnostics: reported, never decisive.
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum FileStatus {
    Present,
    Missing,
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileCheck {
    /// Path relative to the trip directory.
    pub file: String,
    pub subsystem: String,
    pub role: FileRole,
    pub status: FileStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "subsystem", rename_all = "snake_case")]
pub enum LayoutFinding {
    MissingEssential(String),
    MissingNonessential(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub files: Vec<FileCheck>,
    pub findings: Vec<LayoutFinding>,
    pub valid: bool,
}

impl LayoutReport {
    pub fn status(&self, file: &str) -> Option<&FileStatus> {
        self.files.iter().find(|f| f.file == file).map(|f| &f.status)
    }
}

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("{0} is not a directory")]
    NotADirectory(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_csv(path: &Path, header: &'static str) -> FileStatus {
    match fs::read(path) {
        Err(e) if e.kind() == io::ErrorKind::NotFound => FileStatus::Missing,
        Err(e) => FileStatus::Invalid(e.to_string()),
        Ok(bytes) => {
            let first = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
            let normalized: String = String::from_utf8_lossy(first).split(',').map(str::trim).collect::<Vec<_>>().join(",");
            if bytes.is_empty() || normalized == header {
                FileStatus::Present
            } else {
                FileStatus::Invalid(format!("unexpected header {normalized:?}"))
            }
        }
    }
}

fn check_exists(path: &Path) -> FileStatus {
    match fs::metadata(path) {
        Ok(m) if m.is_file() => FileStatus::Present,
        Ok(_) => FileStatus::Invalid("not a regular file".into()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => FileStatus::Missing,
        Err(e) => FileStatus::Invalid(e.to_string()),
    }
}

fn check_container(path: &Path) -> FileStatus {
    match fs::File::open(path) {
        Err(e) if e.kind() == io::ErrorKind::NotFound => FileStatus::Missing,
        Err(e) => FileStatus::Invalid(e.to_string()),
        Ok(f) => match formats::ContainerReader::new(f) {
            Ok(_) => FileStatus::Present,
            Err(e) => FileStatus::Invalid(e.to_string()),
        },
    }
}

fn check_dacman(layout: &TripLayout) -> FileStatus {
    match layout.load_dacman() {
        Ok(cfg) => match cfg.validate() {
            Ok(()) => FileStatus::Present,
            Err(e) => FileStatus::Invalid(e.to_string()),
        },
        Err(crate::dacman::ConfigError::Io { source, .. }) if source.kind() == io::ErrorKind::NotFound => {
            FileStatus::Missing
        }
        Err(e) => FileStatus::Invalid(e.to_string()),
    }
}

/// Checks every expected file. The trip is invalid iff an essential file
/// (a camera's container or frame CSV, `trip_dacman.json`, `data_can.csv`)
/// is missing.
pub fn validate_layout(dir: &Path) -> Result<LayoutReport, LayoutError> {
    if !fs::metadata(dir).map(|m| m.is_dir()).unwrap_or(false) {
        return Err(LayoutError::NotADirectory(dir.to_path_buf()));
    }
    let layout = TripLayout::new(dir);
    let mut files = Vec::new();
    let mut push = |file: String, subsystem: &str, role: FileRole, status: FileStatus| {
        files.push(FileCheck { file, subsystem: subsystem.to_string(), role, status });
    };

    push(DACMAN_FILE.into(), "trip", FileRole::Essential, check_dacman(&layout));
    let cameras = layout.cameras();
    if cameras.is_empty() {
        push("<camera>".into(), "camera", FileRole::Essential, FileStatus::Missing);
    }
    for cam in &cameras {
        push(format!("{cam}/{cam}.h264"), cam, FileRole::Essential, check_container(&layout.camera_video(cam)));
        push(format!("{cam}/{cam}.csv"), cam, FileRole::Essential, check_csv(&layout.camera_csv(cam), FRAME_HEADER));
        push(format!("{cam}/{cam}.error"), cam, FileRole::Auxiliary, check_exists(&layout.camera_error(cam)));
    }
    push(CAN_FILE.into(), "can", FileRole::Essential, check_csv(&layout.can_csv(), CAN_HEADER));
    push(GPS_FILE.into(), "gps", FileRole::Nonessential, check_csv(&layout.gps_csv(), GPS_HEADER));
    push(IMU_FILE.into(), "imu", FileRole::Nonessential, check_csv(&layout.imu_csv(), IMU_HEADER));
    push(AUDIO_FILE.into(), "audio", FileRole::Nonessential, check_exists(&layout.audio_raw()));
    for sub in ["can", "gps", "imu", "audio"] {
        push(format!("{sub}.error"), sub, FileRole::Auxiliary, check_exists(&layout.error_file(sub)));
    }
    push(SPECS_FILE.into(), "trip", FileRole::Auxiliary, check_exists(&layout.specs()));
    push(DIAGNOSTICS_FILE.into(), "trip", FileRole::Auxiliary, check_exists(&layout.diagnostics()));

    let mut findings = Vec::new();
    for f in &files {
        if f.status != FileStatus::Missing {
            continue;
        }
        let finding = match f.role {
            FileRole::Essential => LayoutFinding::MissingEssential(f.subsystem.clone()),
            FileRole::Nonessential => LayoutFinding::MissingNonessential(f.subsystem.clone()),
            FileRole::Auxiliary => continue,
        };
        if !findings.contains(&finding) {
            findings.push(finding);
        }
    }
    let valid = !findings.iter().any(|f| matches!(f, LayoutFinding::MissingEssential(_)));
    Ok(LayoutReport { files, findings, valid })
}
