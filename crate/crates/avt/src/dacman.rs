//! Logger configuration, stored in every trip as `trip_dacman.json`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use avt_core::SubsystemKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub name: String,
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DacmanConfig {
    pub rider_id: u32,
    pub subject_id: u32,
    pub vehicle_id: u32,
    pub study_id: u32,
    pub cameras: Vec<CameraConfig>,
    pub lighthouse_interval_s: f64,
    /// Keys this version does not know about, kept so copies round-trip.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl DacmanConfig {
    pub fn new(rider_id: u32, subject_id: u32, vehicle_id: u32, study_id: u32, cameras: &[&str]) -> Self {
        DacmanConfig {
            rider_id,
            subject_id,
            vehicle_id,
            study_id,
            cameras: cameras
                .iter()
                .enumerate()
                .map(|(i, name)| CameraConfig { name: (*name).to_string(), device_id: format!("/dev/video{i}") })
                .collect(),
            lighthouse_interval_s: 60.0,
            extra: Map::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rider_id == 0 {
            return Err(ConfigError::Invalid("rider_id must be positive".into()));
        }
        if !(self.lighthouse_interval_s.is_finite() && self.lighthouse_interval_s > 0.0) {
            return Err(ConfigError::Invalid("lighthouse_interval_s must be positive".into()));
        }
        if self.cameras.is_empty() {
            return Err(ConfigError::Invalid("no cameras configured".into()));
        }
        let mut names = BTreeSet::new();
        let mut devices = BTreeSet::new();
        for cam in &self.cameras {
            if !valid_camera_name(&cam.name) {
                return Err(ConfigError::Invalid(format!("invalid camera name {:?}", cam.name)));
            }
            if !names.insert(cam.name.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate camera {}", cam.name)));
            }
            if !devices.insert(cam.device_id.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate device id {}", cam.device_id)));
            }
        }
        Ok(())
    }

    pub fn camera_names(&self) -> impl Iterator<Item = &str> {
        self.cameras.iter().map(|c| c.name.as_str())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let cfg: DacmanConfig = serde_json::from_str(&text)
            .map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Camera directory names double as file stems, so they are kept to a safe
/// alphabet and may not shadow another subsystem.
pub fn valid_camera_name(name: &str) -> bool {
    !name.is_empty()
        && !SubsystemKind::is_reserved_name(name)
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}
