//! Encrypted status reports between loggers (lighthouse) and the central
//! server (homebase), plus the heartbeat HTTP service.
//!
//! Envelope layout:
//!
//! ```text
//! version: u8 = 1 | sender public key: 32 | nonce: 24 | crypto_box(JSON report)
//! ```
//!
//! On the wire each envelope is preceded by its length as a big-endian u32.
//! The server answers every envelope with one status byte (see [`Reject::code`]).

pub mod heartbeat;
pub mod homebase;
pub mod lighthouse;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crypto_box::aead::{Aead, AeadCore, OsRng};
use crypto_box::{PublicKey, SalsaBox, SecretKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use avt_core::health::{ReportError, StatusReport};
use avt_core::Timestamp;

pub const ENVELOPE_VERSION: u8 = 1;
pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 24;
pub const HEADER_LEN: usize = 1 + KEY_LEN + NONCE_LEN;
/// Poly1305 tag added by the box.
pub const TAG_LEN: usize = 16;
pub const MAX_ENVELOPE_LEN: usize = 64 * 1024;

pub fn now() -> Timestamp {
    let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    Timestamp::from_micros(d.as_micros() as u64)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("key must be {KEY_LEN} bytes, got {0}")]
    Length(usize),
    #[error("all-zero key")]
    Zero,
    #[error("key is not hex: {0}")]
    Hex(String),
}

pub fn parse_key(bytes: &[u8]) -> Result<[u8; KEY_LEN], KeyError> {
    let key: [u8; KEY_LEN] = bytes.try_into().map_err(|_| KeyError::Length(bytes.len()))?;
    if key == [0; KEY_LEN] {
        return Err(KeyError::Zero);
    }
    Ok(key)
}

pub fn parse_hex_key(text: &str) -> Result<[u8; KEY_LEN], KeyError> {
    let bytes = hex::decode(text.trim()).map_err(|e| KeyError::Hex(e.to_string()))?;
    parse_key(&bytes)
}

pub fn read_key_file(path: &Path) -> anyhow::Result<[u8; KEY_LEN]> {
    let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    parse_hex_key(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

#[derive(Clone)]
pub struct KeyPair {
    pub secret: [u8; KEY_LEN],
    pub public: [u8; KEY_LEN],
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("public", &hex::encode(self.public)).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate() -> Self {
        let secret = SecretKey::generate(&mut OsRng);
        KeyPair { public: secret.public_key().to_bytes(), secret: secret.to_bytes() }
    }

    pub fn from_secret(secret: &[u8]) -> Result<Self, KeyError> {
        let secret = parse_key(secret)?;
        Ok(KeyPair { public: SecretKey::from_bytes(secret).public_key().to_bytes(), secret })
    }

    /// Writes `<prefix>.key` (owner-only) and `<prefix>.pub` as hex.
    pub fn write(&self, prefix: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        let key = with_suffix(prefix, "key");
        let public = with_suffix(prefix, "pub");
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create_new(true);
        #[cfg(unix)]
        std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
        use std::io::Write as _;
        writeln!(opts.open(&key)?, "{}", hex::encode(self.secret))?;
        fs::write(&public, format!("{}\n", hex::encode(self.public)))?;
        Ok((key, public))
    }
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Debug, Error)]
pub enum SealError {
    #[error("bad key: {0}")]
    BadKey(#[from] KeyError),
    #[error("invalid report: {0}")]
    InvalidReport(#[from] ReportError),
    #[error("encryption failed")]
    Encrypt,
}

/// Encrypts and authenticates a report from a device to the server.
pub fn seal_report(report: &StatusReport, device_secret: &[u8], server_public: &[u8]) -> Result<Vec<u8>, SealError> {
    let secret = SecretKey::from_bytes(parse_key(device_secret)?);
    let server = PublicKey::from_bytes(parse_key(server_public)?);
    report.validate()?;
    let plaintext = serde_json::to_vec(report).expect("report serializes");
    let nonce = SalsaBox::generate_nonce(&mut OsRng);
    let ciphertext = SalsaBox::new(&server, &secret).encrypt(&nonce, plaintext.as_slice()).map_err(|_| SealError::Encrypt)?;
    let mut out = Vec::with_capacity(HEADER_LEN + ciphertext.len());
    out.push(ENVELOPE_VERSION);
    out.extend_from_slice(secret.public_key().as_bytes());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ciphertext);
    Ok(out)
}

/// Why the server refused an envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Error)]
#[serde(rename_all = "snake_case")]
pub enum Reject {
    #[error("envelope too large")]
    Oversize,
    #[error("envelope truncated")]
    Truncated,
    #[error("unsupported envelope version")]
    UnsupportedVersion,
    #[error("unknown sender")]
    UnknownSender,
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("malformed report")]
    MalformedReport,
    #[error("report rider does not match sender")]
    RiderMismatch,
    #[error("replayed or out-of-order sequence number")]
    Replay,
    #[error("could not store report")]
    Storage,
}

impl Reject {
    pub const ALL: [Reject; 9] = [
        Reject::Oversize,
        Reject::Truncated,
        Reject::UnsupportedVersion,
        Reject::UnknownSender,
        Reject::AuthenticationFailed,
        Reject::MalformedReport,
        Reject::RiderMismatch,
        Reject::Replay,
        Reject::Storage,
    ];

    /// Status byte sent back to the client; 0 means accepted.
    pub fn code(self) -> u8 {
        Reject::ALL.iter().position(|r| *r == self).expect("listed") as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Reject::ALL.get((code as usize).checked_sub(1)?).copied()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub rider_id: u32,
    /// Hex-encoded public key.
    pub public_key: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegistryFile {
    pub devices: Vec<DeviceEntry>,
}

/// The server key plus the public keys of the registered devices.
pub struct DeviceRegistry {
    server: SecretKey,
    devices: HashMap<[u8; KEY_LEN], u32>,
}

impl DeviceRegistry {
    pub fn new(server_secret: &[u8]) -> Result<Self, KeyError> {
        Ok(DeviceRegistry { server: SecretKey::from_bytes(parse_key(server_secret)?), devices: HashMap::new() })
    }

    pub fn server_public(&self) -> [u8; KEY_LEN] {
        self.server.public_key().to_bytes()
    }

    pub fn register(&mut self, rider_id: u32, public_key: &[u8]) -> Result<(), KeyError> {
        self.devices.insert(parse_key(public_key)?, rider_id);
        Ok(())
    }

    pub fn rider_for(&self, public_key: &[u8; KEY_LEN]) -> Option<u32> {
        self.devices.get(public_key).copied()
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn load(server_key: &Path, registry: &Path) -> anyhow::Result<Self> {
        let mut reg = DeviceRegistry::new(&read_key_file(server_key)?)?;
        let text = fs::read_to_string(registry).map_err(|e| anyhow::anyhow!("{}: {e}", registry.display()))?;
        let file: RegistryFile = serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", registry.display()))?;
        for d in &file.devices {
            let key = parse_hex_key(&d.public_key).map_err(|e| anyhow::anyhow!("{}: rider {}: {e}", registry.display(), d.rider_id))?;
            reg.register(d.rider_id, &key)?;
        }
        Ok(reg)
    }
}

/// Authenticates and decrypts one envelope. The sender must be registered
/// and the report must name the rider the sender is registered to.
pub fn open_envelope(bytes: &[u8], registry: &DeviceRegistry) -> Result<StatusReport, Reject> {
    if bytes.len() > MAX_ENVELOPE_LEN {
        return Err(Reject::Oversize);
    }
    if bytes.is_empty() {
        return Err(Reject::Truncated);
    }
    if bytes[0] != ENVELOPE_VERSION {
        return Err(Reject::UnsupportedVersion);
    }
    if bytes.len() < HEADER_LEN + TAG_LEN {
        return Err(Reject::Truncated);
    }
    let sender: [u8; KEY_LEN] = bytes[1..1 + KEY_LEN].try_into().expect("sized");
    let rider_id = registry.rider_for(&sender).ok_or(Reject::UnknownSender)?;
    let nonce = crypto_box::Nonce::from_slice(&bytes[1 + KEY_LEN..HEADER_LEN]);
    let plaintext = SalsaBox::new(&PublicKey::from_bytes(sender), &registry.server)
        .decrypt(nonce, &bytes[HEADER_LEN..])
        .map_err(|_| Reject::AuthenticationFailed)?;
    let report: StatusReport = serde_json::from_slice(&plaintext).map_err(|_| Reject::MalformedReport)?;
    report.validate().map_err(|_| Reject::MalformedReport)?;
    if report.rider_id != rider_id {
        return Err(Reject::RiderMismatch);
    }
    Ok(report)
}
