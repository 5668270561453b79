//! CAN frames and declarative signal decoding.
//!
//! Bit numbering follows the two conventions used by common signal databases:
//! little-endian (Intel) signals give the position of their least significant
//! bit, counting LSB-first through the payload; big-endian (Motorola) signals
//! give the position of their most significant bit in the same per-byte
//! numbering and then run towards bit 0 of the byte and on into the next byte.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

pub const MAX_PAYLOAD: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanError {
    #[error("arbitration id {0:#x} exceeds 29 bits")]
    IdOutOfRange(u32),
    #[error("invalid arbitration id {0:?}")]
    InvalidId(String),
    #[error("payload of {0} bytes exceeds 8")]
    PayloadTooLong(usize),
}

/// 11-bit standard or 29-bit extended arbitration id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanId(u32);

impl CanId {
    pub const MAX: u32 = 0x1FFF_FFFF;

    pub const fn new(raw: u32) -> Result<Self, CanError> {
        if raw > Self::MAX {
            Err(CanError::IdOutOfRange(raw))
        } else {
            Ok(CanId(raw))
        }
    }

    /// Masks to 29 bits; for ids known at compile time.
    pub const fn from_raw_unchecked(raw: u32) -> Self {
        CanId(raw & Self::MAX)
    }

    pub const fn raw(self) -> u32 {
        self.0
    }

    pub const fn is_extended(self) -> bool {
        self.0 > 0x7FF
    }
}

/// Lowercase hex without prefix, the form used in `data_can.csv`.
impl fmt::Display for CanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:x}", self.0)
    }
}

/// Hex, with or without a `0x` prefix.
impl FromStr for CanId {
    type Err = CanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .unwrap_or(s);
        if digits.is_empty() || digits.len() > 8 || !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(CanError::InvalidId(s.into()));
        }
        let raw = u32::from_str_radix(digits, 16).map_err(|_| CanError::InvalidId(s.into()))?;
        CanId::new(raw)
    }
}

impl Serialize for CanId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&format_args!("0x{:x}", self.0))
    }
}

impl<'de> Deserialize<'de> for CanId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr<'a> {
            Number(u32),
            #[serde(borrow)]
            Text(alloc::borrow::Cow<'a, str>),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Number(n) => CanId::new(n).map_err(serde::de::Error::custom),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A well-formed data frame: the payload length is the DLC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanFrame {
    pub ts: Timestamp,
    pub id: CanId,
    dlc: u8,
    data: [u8; MAX_PAYLOAD],
}

impl CanFrame {
    pub fn new(ts: Timestamp, id: CanId, payload: &[u8]) -> Result<Self, CanError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(CanError::PayloadTooLong(payload.len()));
        }
        let mut data = [0u8; MAX_PAYLOAD];
        data[..payload.len()].copy_from_slice(payload);
        Ok(CanFrame { ts, id, dlc: payload.len() as u8, data })
    }

    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    pub fn payload(&self) -> &[u8] {
        &self.data[..self.dlc as usize]
    }
}

/// A frame as delivered by the controller, before validation. The claimed
/// DLC may disagree with the bytes actually received.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusFrame {
    pub ts: Timestamp,
    pub id: u32,
    pub dlc: u8,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MalformedFrame {
    #[error("dlc {dlc} does not match {len} payload bytes")]
    DlcMismatch { dlc: u8, len: usize },
    #[error(transparent)]
    Frame(#[from] CanError),
}

impl From<CanFrame> for BusFrame {
    fn from(f: CanFrame) -> Self {
        BusFrame { ts: f.ts, id: f.id.raw(), dlc: f.dlc, data: f.payload().to_vec() }
    }
}

impl TryFrom<BusFrame> for CanFrame {
    type Error = MalformedFrame;

    fn try_from(f: BusFrame) -> Result<Self, Self::Error> {
        if f.dlc as usize != f.data.len() {
            return Err(MalformedFrame::DlcMismatch { dlc: f.dlc, len: f.data.len() });
        }
        Ok(CanFrame::new(f.ts, CanId::new(f.id)?, &f.data)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignalError {
    #[error("signal {name}: bit length {bit_length} outside 1..=64")]
    BadLength { name: String, bit_length: u8 },
    #[error("signal {name}: start bit {start_bit} outside 0..=63")]
    BadStart { name: String, start_bit: u8 },
    #[error("signal {name}: bits do not fit in 64")]
    Overflow { name: String },
    #[error("signal {name}: scale must be finite and non-zero, offset finite")]
    BadScaling { name: String },
    #[error("signal {name}: needs {needed} payload bytes, frame has {available}")]
    SpecOutOfRange { name: String, needed: usize, available: usize },
    #[error("duplicate signal name {0}")]
    DuplicateName(String),
}

/// How one engineering value is packed into frames with a given id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSignalSpec")]
pub struct SignalSpec {
    pub name: String,
    pub id: CanId,
    pub start_bit: u8,
    pub bit_length: u8,
    pub byte_order: ByteOrder,
    pub signed: bool,
    pub scale: f64,
    pub offset: f64,
    #[serde(default)]
    pub unit: String,
}

#[derive(Deserialize)]
struct RawSignalSpec {
    name: String,
    id: CanId,
    start_bit: u8,
    bit_length: u8,
    byte_order: ByteOrder,
    signed: bool,
    scale: f64,
    offset: f64,
    #[serde(default)]
    unit: String,
}

impl TryFrom<RawSignalSpec> for SignalSpec {
    type Error = SignalError;

    fn try_from(r: RawSignalSpec) -> Result<Self, Self::Error> {
        let spec = SignalSpec {
            name: r.name,
            id: r.id,
            start_bit: r.start_bit,
            bit_length: r.bit_length,
            byte_order: r.byte_order,
            signed: r.signed,
            scale: r.scale,
            offset: r.offset,
            unit: r.unit,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn mask(bits: u8) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        let name = || self.name.clone();
        if !(1..=64).contains(&self.bit_length) {
            return Err(SignalError::BadLength { name: name(), bit_length: self.bit_length });
        }
        if self.start_bit > 63 {
            return Err(SignalError::BadStart { name: name(), start_bit: self.start_bit });
        }
        if self.first_linear_bit() as u32 + self.bit_length as u32 > 64 {
            return Err(SignalError::Overflow { name: name() });
        }
        if !self.scale.is_finite() || self.scale == 0.0 || !self.offset.is_finite() {
            return Err(SignalError::BadScaling { name: name() });
        }
        Ok(())
    }

    /// Start of the signal in its order's linear numbering: the LSB position
    /// for little-endian, the MSB position counted from the first byte's MSB
    /// for big-endian.
    fn first_linear_bit(&self) -> u8 {
        match self.byte_order {
            ByteOrder::Little => self.start_bit,
            ByteOrder::Big => (self.start_bit / 8) * 8 + (7 - self.start_bit % 8),
        }
    }

    /// Shift that moves the signal's LSB to bit 0 of the assembled word.
    fn word_shift(&self) -> u32 {
        match self.byte_order {
            ByteOrder::Little => self.start_bit as u32,
            ByteOrder::Big => 64 - (self.first_linear_bit() as u32 + self.bit_length as u32),
        }
    }

    /// Smallest payload length that holds every bit of the signal.
    pub fn min_payload_len(&self) -> usize {
        (self.first_linear_bit() as usize + self.bit_length as usize).div_ceil(8)
    }

    fn word(&self, payload: &[u8]) -> u64 {
        let mut buf = [0u8; MAX_PAYLOAD];
        buf[..payload.len()].copy_from_slice(payload);
        match self.byte_order {
            ByteOrder::Little => u64::from_le_bytes(buf),
            ByteOrder::Big => u64::from_be_bytes(buf),
        }
    }

    fn check_fits(&self, available: usize) -> Result<(), SignalError> {
        let needed = self.min_payload_len();
        if needed > available {
            return Err(SignalError::SpecOutOfRange { name: self.name.clone(), needed, available });
        }
        Ok(())
    }

    /// Raw integer bits of the signal, zero-extended.
    pub fn raw_bits(&self, payload: &[u8]) -> Result<u64, SignalError> {
        self.check_fits(payload.len())?;
        Ok((self.word(payload) >> self.word_shift()) & mask(self.bit_length))
    }

    fn raw_to_f64(&self, raw: u64) -> f64 {
        if self.signed {
            let unused = 64 - self.bit_length as u32;
            (((raw << unused) as i64) >> unused) as f64
        } else {
            raw as f64
        }
    }

    /// Engineering value, or `None` when the frame carries a different id.
    pub fn extract(&self, frame: &CanFrame) -> Result<Option<f64>, SignalError> {
        if frame.id != self.id {
            return Ok(None);
        }
        let raw = self.raw_bits(frame.payload())?;
        Ok(Some(self.raw_to_f64(raw) * self.scale + self.offset))
    }

    /// Quantizes `value` to the nearest representable raw value and writes it
    /// into `payload`, leaving other bits untouched.
    pub fn encode(&self, value: f64, payload: &mut [u8]) -> Result<(), SignalError> {
        self.check_fits(payload.len())?;
        let steps = libm::round((value - self.offset) / self.scale);
        let bits = self.bit_length as u32;
        let raw = if self.signed {
            let (lo, hi) = if bits == 64 {
                (i64::MIN as f64, i64::MAX as f64)
            } else {
                (-((1u64 << (bits - 1)) as f64), ((1u64 << (bits - 1)) - 1) as f64)
            };
            (steps.clamp(lo, hi) as i64) as u64 & mask(self.bit_length)
        } else {
            steps.clamp(0.0, mask(self.bit_length) as f64) as u64
        };
        let shift = self.word_shift();
        let field = mask(self.bit_length) << shift;
        let word = (self.word(payload) & !field) | ((raw << shift) & field);
        let bytes = match self.byte_order {
            ByteOrder::Little => word.to_le_bytes(),
            ByteOrder::Big => word.to_be_bytes(),
        };
        let n = payload.len();
        payload.copy_from_slice(&bytes[..n]);
        Ok(())
    }
}

/// Signal specs indexed by arbitration id; names are unique.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SignalSpec>", into = "Vec<SignalSpec>")]
pub struct DecodeTable {
    specs: Vec<SignalSpec>,
    #[serde(skip)]
    by_id: BTreeMap<CanId, Vec<usize>>,
}

impl DecodeTable {
    pub fn new(specs: Vec<SignalSpec>) -> Result<Self, SignalError> {
        let mut by_id: BTreeMap<CanId, Vec<usize>> = BTreeMap::new();
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            if specs[..i].iter().any(|s| s.name == spec.name) {
                return Err(SignalError::DuplicateName(spec.name.clone()));
            }
            by_id.entry(spec.id).or_default().push(i);
        }
        Ok(DecodeTable { specs, by_id })
    }

    pub fn specs(&self) -> &[SignalSpec] {
        &self.specs
    }

    pub fn get(&self, name: &str) -> Option<&SignalSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn for_id(&self, id: CanId) -> impl Iterator<Item = &SignalSpec> {
        self.by_id
            .get(&id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.specs[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = CanId> + '_ {
        self.by_id.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

impl TryFrom<Vec<SignalSpec>> for DecodeTable {
    type Error = SignalError;

    fn try_from(specs: Vec<SignalSpec>) -> Result<Self, Self::Error> {
        DecodeTable::new(specs)
    }
}

impl From<DecodeTable> for Vec<SignalSpec> {
    fn from(table: DecodeTable) -> Self {
        table.specs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub name: String,
    pub unit: String,
    pub points: Vec<(Timestamp, f64)>,
}

/// Decoded points per signal, in decode-table order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalTimeline {
    pub series: Vec<SignalSeries>,
}

impl SignalTimeline {
    pub fn get(&self, name: &str) -> Option<&[(Timestamp, f64)]> {
        self.series
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.points.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.series.iter().map(|s| s.name.as_str())
    }
}

/// Decodes every frame against every spec registered for its id. Each series
/// keeps frame order.
pub fn decode_trip(frames: &[CanFrame], table: &DecodeTable) -> Result<SignalTimeline, SignalError> {
    let mut series: Vec<SignalSeries> = table
        .specs
        .iter()
        .map(|s| SignalSeries { name: s.name.clone(), unit: s.unit.clone(), points: Vec::new() })
        .collect();
    for frame in frames {
        if let Some(indices) = table.by_id.get(&frame.id) {
            for &i in indices {
                if let Some(value) = table.specs[i].extract(frame)? {
                    series[i].points.push((frame.ts, value));
                }
            }
        }
    }
    Ok(SignalTimeline { series })
}
