//! Deterministic synthetic vehicle.
//!
//! A scenario describes a drive (speed profile, lighting, engagement of a
//! driver-assist feature, bus wake/sleep) and a seed. [`simulate`] turns it
//! into the streams a real vehicle would present to the recorder: CAN frames,
//! GPS at 1 Hz, IMU at 10 Hz, per-camera frame clocks, raw audio and logger
//! diagnostics. Equal scenarios give bit-identical streams.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::can::{BusFrame, ByteOrder, CanFrame, CanId, DecodeTable, SignalSpec};
use crate::stats::{destination, GeoPoint};
use crate::time::{Timestamp, MICROS_PER_SECOND};

/// Nominal camera rate and the low-light fallback.
pub const NOMINAL_FPS: u64 = 30;
pub const LOW_LIGHT_FPS: u64 = 15;
pub const FRAME_JITTER_US: i64 = 500;
pub const GPS_PERIOD_US: u64 = 1_000_000;
pub const IMU_PERIOD_US: u64 = 100_000;
pub const DIAGNOSTICS_PERIOD_US: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Half-open interval `[start_s, end_s)` in seconds from scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
}

impl Segment {
    pub fn contains(&self, t_s: f64) -> bool {
        t_s >= self.start_s && t_s < self.end_s
    }
}

/// Speed holds from `from_s` until the next step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedStep {
    pub from_s: f64,
    pub speed_mps: f64,
}

fn default_speed_signal() -> String {
    "speed".into()
}
fn default_can_period() -> u64 {
    20_000
}
fn default_frame_payload() -> usize {
    4096
}
fn default_audio_rate() -> u64 {
    32_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub seed: u64,
    /// Wall-clock time of scenario second 0.
    pub start: Timestamp,
    pub duration_s: f64,
    pub speed_profile: Vec<SpeedStep>,
    #[serde(default)]
    pub low_light_segments: Vec<Segment>,
    #[serde(default)]
    pub autopilot_segments: Vec<Segment>,
    #[serde(default)]
    pub wake_delay_s: f64,
    pub sleep_at_s: f64,
    pub signal_defs: DecodeTable,
    #[serde(default = "default_speed_signal")]
    pub speed_signal: String,
    #[serde(default)]
    pub autopilot_signal: Option<String>,
    pub cameras: Vec<String>,
    pub gps_start: GeoPoint,
    #[serde(default = "default_can_period")]
    pub can_period_us: u64,
    #[serde(default = "default_frame_payload")]
    pub frame_payload_bytes: usize,
    #[serde(default = "default_audio_rate")]
    pub audio_bytes_per_s: u64,
}

/// Speed (0x155, 16-bit LE, 0.01 m/s), autopilot flag (0x3e9, 1 bit) and a
/// big-endian signed steering angle (0x25, 12 bits, 0.1 deg).
pub fn default_decode_table() -> DecodeTable {
    let spec = |name: &str, id: u32, start_bit, bit_length, byte_order, signed, scale, unit: &str| SignalSpec {
        name: name.into(),
        id: CanId::new(id).expect("static id"),
        start_bit,
        bit_length,
        byte_order,
        signed,
        scale,
        offset: 0.0,
        unit: unit.into(),
    };
    DecodeTable::new(vec![
        spec("speed", 0x155, 0, 16, ByteOrder::Little, false, 0.01, "m/s"),
        spec("autopilot", 0x3e9, 0, 1, ByteOrder::Little, false, 1.0, ""),
        spec("steering", 0x25, 7, 12, ByteOrder::Big, true, 0.1, "deg"),
    ])
    .expect("static table")
}

impl SimScenario {
    /// A constant-speed drive over the whole duration with the default table.
    pub fn constant_speed(seed: u64, start: Timestamp, duration_s: f64, speed_mps: f64, cameras: &[&str]) -> Self {
        SimScenario {
            seed,
            start,
            duration_s,
            speed_profile: vec![SpeedStep { from_s: 0.0, speed_mps }],
            low_light_segments: Vec::new(),
            autopilot_segments: Vec::new(),
            wake_delay_s: 0.0,
            sleep_at_s: duration_s,
            signal_defs: default_decode_table(),
            speed_signal: default_speed_signal(),
            autopilot_signal: Some("autopilot".into()),
            cameras: cameras.iter().map(|c| String::from(*c)).collect(),
            gps_start: GeoPoint { lat: 42.3601, lon: -71.0942 },
            can_period_us: default_can_period(),
            frame_payload_bytes: default_frame_payload(),
            audio_bytes_per_s: default_audio_rate(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration_s must be positive".into());
        }
        let Some(first) = self.speed_profile.first() else {
            return bad("speed_profile is empty".into());
        };
        if first.from_s != 0.0 {
            return bad("speed_profile must start at 0 s".into());
        }
        for pair in self.speed_profile.windows(2) {
            if pair[1].from_s <= pair[0].from_s {
                return bad("speed_profile steps must be strictly increasing".into());
            }
        }
        if self.speed_profile.iter().any(|s| !(s.speed_mps.is_finite() && s.speed_mps >= 0.0)) {
            return bad("speeds must be finite and non-negative".into());
        }
        for seg in self.low_light_segments.iter().chain(&self.autopilot_segments) {
            if !(seg.start_s >= 0.0 && seg.start_s < seg.end_s && seg.end_s <= self.duration_s) {
                return bad(format!("segment [{}, {}) outside [0, {}]", seg.start_s, seg.end_s, self.duration_s));
            }
        }
        if !(self.wake_delay_s >= 0.0 && self.wake_delay_s <= self.sleep_at_s) {
            return bad("need 0 <= wake_delay_s <= sleep_at_s".into());
        }
        if self.cameras.is_empty() {
            return bad("at least one camera is required".into());
        }
        for (i, cam) in self.cameras.iter().enumerate() {
            if cam.is_empty()
                || crate::trip::SubsystemKind::is_reserved_name(cam)
                || !cam.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
            {
                return bad(format!("invalid camera name {cam:?}"));
            }
            if self.cameras[..i].contains(cam) {
                return bad(format!("duplicate camera {cam}"));
            }
        }
        if self.signal_defs.get(&self.speed_signal).is_none() {
            return bad(format!("speed signal {} not in decode table", self.speed_signal));
        }
        if let Some(ap) = &self.autopilot_signal {
            if self.signal_defs.get(ap).is_none() {
                return bad(format!("autopilot signal {ap} not in decode table"));
            }
        }
        if self.can_period_us == 0 {
            return bad("can_period_us must be positive".into());
        }
        Ok(())
    }

    pub fn duration_us(&self) -> u64 {
        libm::round(self.duration_s * MICROS_PER_SECOND as f64) as u64
    }

    pub fn speed_at(&self, t_s: f64) -> f64 {
        self.speed_profile
            .iter()
            .take_while(|s| s.from_s <= t_s)
            .last()
            .map_or(0.0, |s| s.speed_mps)
    }

    /// Distance covered between two scenario times, integrating the
    /// piecewise-constant profile exactly.
    pub fn distance_between(&self, a_s: f64, b_s: f64) -> f64 {
        let mut total = 0.0;
        for (i, step) in self.speed_profile.iter().enumerate() {
            let seg_end = self.speed_profile.get(i + 1).map_or(f64::INFINITY, |n| n.from_s);
            let lo = step.from_s.max(a_s);
            let hi = seg_end.min(b_s);
            if hi > lo {
                total += step.speed_mps * (hi - lo);
            }
        }
        total
    }

    fn is_low_light(&self, t_s: f64) -> bool {
        self.low_light_segments.iter().any(|s| s.contains(t_s))
    }

    fn autopilot_engaged(&self, t_s: f64) -> bool {
        self.autopilot_segments.iter().any(|s| s.contains(t_s))
    }

    fn at(&self, offset_us: u64) -> Timestamp {
        self.start.saturating_add_micros(offset_us)
    }
}

/// Offset of frame-clock tick `k` (1/30 s units) from the camera's start.
pub fn tick_offset_us(k: u64) -> u64 {
    k * MICROS_PER_SECOND / NOMINAL_FPS
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CameraStream {
    pub name: String,
    pub frames: Vec<Timestamp>,
    pub payload_len: usize,
    payload_seed: u64,
}

impl CameraStream {
    /// Opaque stand-in for the encoded frame `index`.
    pub fn payload(&self, index: usize) -> Vec<u8> {
        filler(self.payload_seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), self.payload_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsSample {
    pub ts: Timestamp,
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub speed: f64,
    pub track: f64,
    pub climb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub ts: Timestamp,
    pub x_accel: f64,
    pub y_accel: f64,
    pub z_accel: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSample {
    pub ts: Timestamp,
    pub external_temp_c: f64,
    pub pmu_temp_c: f64,
    pub hdd_temp_c: f64,
    pub power_w: f64,
    pub free_disk_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioStream {
    pub start: Timestamp,
    pub end: Timestamp,
    pub bytes_per_s: u64,
    seed: u64,
}

impl AudioStream {
    /// Raw bytes covering `[from, to)`; concatenating consecutive windows
    /// gives the same bytes as one window over the union.
    pub fn bytes_between(&self, from: Timestamp, to: Timestamp) -> Vec<u8> {
        let first = self.byte_index(from);
        let last = self.byte_index(to);
        (first..last).map(|i| (splitmix(self.seed ^ (i / 8)) >> ((i % 8) * 8)) as u8).collect()
    }

    fn byte_index(&self, ts: Timestamp) -> u64 {
        let clamped = ts.clamp(self.start, self.end);
        (clamped.micros_since(self.start) as u128 * self.bytes_per_s as u128 / MICROS_PER_SECOND as u128) as u64
    }

    pub fn total_bytes(&self) -> u64 {
        self.byte_index(self.end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStreams {
    pub cameras: Vec<CameraStream>,
    pub can: Vec<CanFrame>,
    pub gps: Vec<GpsSample>,
    pub imu: Vec<ImuSample>,
    pub audio: AudioStream,
    pub diagnostics: Vec<DiagnosticSample>,
    /// `[wake, sleep]`: the interval during which the vehicle talks on the bus.
    pub bus_active: (Timestamp, Timestamp),
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn filler(seed: u64, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    let mut i = 0u64;
    while out.len() < len {
        let word = splitmix(seed ^ i).to_le_bytes();
        let take = (len - out.len()).min(8);
        out.extend_from_slice(&word[..take]);
        i += 1;
    }
    out
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_CAMERA_BASE: u64 = 16;
const STREAM_GPS: u64 = 1;
const STREAM_IMU: u64 = 2;
const STREAM_DIAG: u64 = 3;

fn camera_stream(s: &SimScenario, index: usize) -> CameraStream {
    let mut rng = stream_rng(s.seed, STREAM_CAMERA_BASE + index as u64);
    let offset_us: u64 = rng.gen_range(0..tick_offset_us(1));
    let payload_seed: u64 = rng.gen();
    let duration_us = s.duration_us();
    let mut frames = Vec::new();
    let mut tick = 0u64;
    loop {
        let nominal = offset_us + tick_offset_us(tick);
        if nominal >= duration_us {
            break;
        }
        let jitter: i64 = rng.gen_range(-FRAME_JITTER_US..=FRAME_JITTER_US);
        let jittered = (nominal as i64 + jitter).max(0) as u64;
        frames.push(s.at(jittered));
        let low_light = s.is_low_light(nominal as f64 / MICROS_PER_SECOND as f64);
        tick += if low_light { NOMINAL_FPS / LOW_LIGHT_FPS } else { 1 };
    }
    CameraStream { name: s.cameras[index].clone(), frames, payload_len: s.frame_payload_bytes, payload_seed }
}

fn can_frames(s: &SimScenario) -> Vec<CanFrame> {
    let wake_us = libm::round(s.wake_delay_s * 1e6) as u64;
    let sleep_us = (libm::round(s.sleep_at_s * 1e6) as u64).min(s.duration_us());
    let mut frames = Vec::new();
    for (i, id) in s.signal_defs.ids().enumerate() {
        let specs: Vec<&SignalSpec> = s.signal_defs.for_id(id).collect();
        let dlc = specs.iter().map(|sp| sp.min_payload_len()).max().unwrap_or(1).max(1);
        let mut t = wake_us + (i as u64 * 1_000) % s.can_period_us;
        while t < sleep_us {
            let t_s = t as f64 / 1e6;
            let mut payload = [0u8; 8];
            for spec in &specs {
                let value = if spec.name == s.speed_signal {
                    s.speed_at(t_s)
                } else if s.autopilot_signal.as_deref() == Some(spec.name.as_str()) {
                    if s.autopilot_engaged(t_s) { 1.0 } else { 0.0 }
                } else {
                    0.0
                };
                spec.encode(value, &mut payload[..dlc]).expect("dlc covers every signal");
            }
            frames.push(CanFrame::new(s.at(t), id, &payload[..dlc]).expect("dlc <= 8"));
            t += s.can_period_us;
        }
    }
    frames.sort_by_key(|f| f.ts);
    frames
}

fn gps_samples(s: &SimScenario) -> Vec<GpsSample> {
    let mut rng = stream_rng(s.seed, STREAM_GPS);
    let heading: f64 = rng.gen_range(0.0..360.0);
    let altitude: f64 = rng.gen_range(5.0..60.0);
    let duration_us = s.duration_us();
    (0..)
        .map(|k| k * GPS_PERIOD_US)
        .take_while(|&t| t < duration_us)
        .map(|t| {
            let t_s = t as f64 / 1e6;
            let pos = destination(s.gps_start, heading, s.distance_between(0.0, t_s));
            GpsSample {
                ts: s.at(t),
                latitude: pos.lat,
                longitude: pos.lon,
                altitude,
                speed: s.speed_at(t_s),
                track: heading,
                climb: 0.0,
            }
        })
        .collect()
}

fn imu_samples(s: &SimScenario) -> Vec<ImuSample> {
    let mut rng = stream_rng(s.seed, STREAM_IMU);
    let duration_us = s.duration_us();
    let mut noise = move |amp: f64| rng.gen_range(-amp..=amp);
    (0..)
        .map(|k| k * IMU_PERIOD_US)
        .take_while(|&t| t < duration_us)
        .map(|t| {
            let t_s = t as f64 / 1e6;
            let dt = IMU_PERIOD_US as f64 / 1e6;
            let accel = (s.speed_at(t_s + dt) - s.speed_at(t_s)) / dt;
            ImuSample {
                ts: s.at(t),
                x_accel: accel + noise(0.05),
                y_accel: noise(0.05),
                z_accel: 9.80665 + noise(0.05),
                roll: noise(0.2),
                pitch: noise(0.2),
                yaw: noise(0.2),
            }
        })
        .collect()
}

fn diagnostics(s: &SimScenario) -> Vec<DiagnosticSample> {
    let mut rng = stream_rng(s.seed, STREAM_DIAG);
    let base_free: u64 = rng.gen_range(200_000_000_000..800_000_000_000);
    let per_second = s.cameras.len() as u64 * s.frame_payload_bytes as u64 * NOMINAL_FPS + s.audio_bytes_per_s;
    let ambient: f64 = rng.gen_range(-5.0..30.0);
    let duration_us = s.duration_us();
    (0..)
        .map(|k| k * DIAGNOSTICS_PERIOD_US)
        .take_while(|&t| t < duration_us)
        .map(|t| {
            let t_s = t as f64 / 1e6;
            DiagnosticSample {
                ts: s.at(t),
                external_temp_c: ambient + rng.gen_range(-0.2..0.2),
                pmu_temp_c: ambient + 15.0 + libm::fmin(t_s / 60.0, 10.0),
                hdd_temp_c: ambient + 8.0 + libm::fmin(t_s / 120.0, 6.0),
                power_w: 11.5 + rng.gen_range(-0.5..0.5),
                free_disk_bytes: base_free.saturating_sub(per_second * (t / MICROS_PER_SECOND)),
            }
        })
        .collect()
}

pub fn simulate(scenario: &SimScenario) -> Result<SimStreams, SimError> {
    scenario.validate()?;
    let cameras = (0..scenario.cameras.len()).map(|i| camera_stream(scenario, i)).collect();
    let wake = scenario.at(libm::round(scenario.wake_delay_s * 1e6) as u64);
    let sleep = scenario.at((libm::round(scenario.sleep_at_s * 1e6) as u64).min(scenario.duration_us()));
    Ok(SimStreams {
        cameras,
        can: can_frames(scenario),
        gps: gps_samples(scenario),
        imu: imu_samples(scenario),
        audio: AudioStream {
            start: scenario.start,
            end: scenario.at(scenario.duration_us()),
            bytes_per_s: scenario.audio_bytes_per_s,
            seed: splitmix(scenario.seed ^ 0xA0D1_0000),
        },
        diagnostics: diagnostics(scenario),
        bus_active: (wake, sleep),
    })
}

/// Who put a frame on the simulated bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Vehicle,
    Node(u32),
}

/// The vehicle bus as seen by attached nodes. Loggers attach through
/// [`SimBus::listen_only`], which has no way to transmit.
#[derive(Debug, Default)]
pub struct SimBus {
    traffic: Vec<(Origin, BusFrame)>,
}

impl SimBus {
    pub fn from_vehicle(frames: &[CanFrame]) -> Self {
        SimBus { traffic: frames.iter().map(|f| (Origin::Vehicle, BusFrame::from(*f))).collect() }
    }

    pub fn transmit(&mut self, origin: Origin, frame: BusFrame) {
        self.traffic.push((origin, frame));
    }

    pub fn listen_only(&self) -> ListenOnlyTap<'_> {
        ListenOnlyTap { inner: self.traffic.iter() }
    }

    /// Frames placed on the bus by anything other than the vehicle itself.
    pub fn foreign_frame_count(&self) -> usize {
        self.traffic.iter().filter(|(o, _)| *o != Origin::Vehicle).count()
    }
}

/// Receive-only view of bus traffic.
pub struct ListenOnlyTap<'a> {
    inner: core::slice::Iter<'a, (Origin, BusFrame)>,
}

impl Iterator for ListenOnlyTap<'_> {
    type Item = BusFrame;

    fn next(&mut self) -> Option<BusFrame> {
        self.inner.next().map(|(_, f)| f.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::can::decode_trip;

    fn scenario(duration_s: f64) -> SimScenario {
        SimScenario::constant_speed(7, Timestamp::from_micros(1_500_000_000_000_000), duration_s, 12.5, &["face", "dash", "front"])
    }

    // Closed-form count of ticks k with offset + floor(k * 1e6 / 30) < D.
    fn oracle_frame_count_constant_rate(offset_us: u64, duration_us: u64, step_ticks: u64) -> u64 {
        let mut n = 0;
        let mut k = 0;
        while offset_us + k * MICROS_PER_SECOND / 30 < duration_us {
            n += 1;
            k += step_ticks;
        }
        n
    }

    #[test]
    fn sixty_seconds_gives_1800_frames() {
        let streams = simulate(&scenario(60.0)).unwrap();
        for cam in &streams.cameras {
            let n = cam.frames.len() as i64;
            assert!((n - 1800).abs() <= 1, "{} has {n}", cam.name);
            let bound = oracle_frame_count_constant_rate(tick_offset_us(1) - 1, 60_000_000, 1);
            assert!(n as u64 >= bound);
        }
    }

    #[test]
    fn low_light_halves_frame_rate() {
        let mut s = scenario(60.0);
        s.low_light_segments.push(Segment { start_s: 0.0, end_s: 60.0 });
        let streams = simulate(&s).unwrap();
        for cam in &streams.cameras {
            let n = cam.frames.len() as i64;
            assert!((n - 900).abs() <= 1, "{} has {n}", cam.name);
        }
    }

    #[test]
    fn frame_gaps_stay_within_jitter_of_nominal() {
        let mut s = scenario(20.0);
        s.low_light_segments.push(Segment { start_s: 5.0, end_s: 11.0 });
        let streams = simulate(&s).unwrap();
        let slack = 2 * FRAME_JITTER_US as u64 + 1;
        for cam in &streams.cameras {
            for pair in cam.frames.windows(2) {
                let gap = pair[1].micros_since(pair[0]);
                assert!(pair[1] > pair[0]);
                let near = |nominal: u64| gap.abs_diff(nominal) <= slack;
                assert!(near(33_333) || near(66_667), "gap {gap}");
            }
        }
    }

    #[test]
    fn zero_speed_decodes_to_zero() {
        let mut s = scenario(10.0);
        s.speed_profile = vec![SpeedStep { from_s: 0.0, speed_mps: 0.0 }];
        let streams = simulate(&s).unwrap();
        let tl = decode_trip(&streams.can, &s.signal_defs).unwrap();
        let speed = tl.get("speed").unwrap();
        assert!(!speed.is_empty());
        assert!(speed.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn decoded_speed_tracks_profile_within_one_quantum() {
        let mut s = scenario(30.0);
        s.speed_profile = vec![
            SpeedStep { from_s: 0.0, speed_mps: 0.0 },
            SpeedStep { from_s: 4.0, speed_mps: 8.333 },
            SpeedStep { from_s: 17.5, speed_mps: 27.777 },
        ];
        let streams = simulate(&s).unwrap();
        let tl = decode_trip(&streams.can, &s.signal_defs).unwrap();
        let quantum = s.signal_defs.get("speed").unwrap().scale;
        for &(ts, v) in tl.get("speed").unwrap() {
            let t_s = ts.micros_since(s.start) as f64 / 1e6;
            assert!((v - s.speed_at(t_s)).abs() <= quantum, "{t_s}: {v}");
        }
    }

    #[test]
    fn can_only_during_bus_activity() {
        let mut s = scenario(30.0);
        s.wake_delay_s = 2.0;
        s.sleep_at_s = 25.0;
        let streams = simulate(&s).unwrap();
        let (wake, sleep) = streams.bus_active;
        assert_eq!(wake, s.start.saturating_add_micros(2_000_000));
        assert!(streams.can.iter().all(|f| f.ts >= wake && f.ts < sleep));
        assert!(streams.can.windows(2).all(|w| w[0].ts <= w[1].ts));
    }

    #[test]
    fn equal_scenarios_give_identical_streams() {
        let a = simulate(&scenario(15.0)).unwrap();
        let b = simulate(&scenario(15.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cameras[0].payload(3), b.cameras[0].payload(3));
        let mut other = scenario(15.0);
        other.seed = 8;
        assert_ne!(simulate(&other).unwrap().cameras[0].frames, a.cameras[0].frames);
    }

    #[test]
    fn audio_windows_concatenate() {
        let streams = simulate(&scenario(3.0)).unwrap();
        let a = &streams.audio;
        let mid = a.start.saturating_add_micros(1_234_567);
        let mut joined = a.bytes_between(a.start, mid);
        joined.extend(a.bytes_between(mid, a.end));
        assert_eq!(joined, a.bytes_between(a.start, a.end));
        assert_eq!(joined.len() as u64, a.total_bytes());
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = scenario(10.0);
        s.duration_s = 0.0;
        assert!(simulate(&s).is_err());
        let mut s = scenario(10.0);
        s.low_light_segments.push(Segment { start_s: 5.0, end_s: 11.0 });
        assert!(simulate(&s).is_err());
        let mut s = scenario(10.0);
        s.cameras.push("face".into());
        assert!(simulate(&s).is_err());
        let mut s = scenario(10.0);
        s.speed_profile[0].speed_mps = -1.0;
        assert!(simulate(&s).is_err());
    }

    #[test]
    fn listen_only_tap_sees_vehicle_traffic() {
        let streams = simulate(&scenario(2.0)).unwrap();
        let bus = SimBus::from_vehicle(&streams.can);
        assert_eq!(bus.listen_only().count(), streams.can.len());
        assert_eq!(bus.foreign_frame_count(), 0);
    }
}
