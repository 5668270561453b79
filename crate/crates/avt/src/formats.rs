//! On-disk formats of a trip directory.
//!
//! Every writer emits whole `\n`-terminated lines. Readers therefore treat an
//! unterminated final line as torn and reject it, along with any row whose
//! fields do not parse.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use avt_core::can::{BusFrame, ByteOrder, MalformedFrame, SignalError};
use avt_core::filter::ErrorFileStats;
use avt_core::sim::{DiagnosticSample, GpsSample, ImuSample};
use avt_core::sync::FrameStamp;
use avt_core::{CanFrame, CanId, DecodeTable, SignalSpec, Timestamp, TripSpecs};

pub const CAN_HEADER: &str = "ts_micro,arbitration_id,data_length,packet_data";
pub const GPS_HEADER: &str = "ts_micro,latitude,longitude,altitude,speed,track,climb";
pub const IMU_HEADER: &str = "ts_micro,x_accel,y_accel,z_accel,roll,pitch,yaw";
pub const FRAME_HEADER: &str = "frame,ts_micro";
pub const DIAGNOSTICS_HEADER: &str = "ts_micro,key,value";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile { path: String, source: io::Error },
    #[error("{path}: expected header {expected:?}, found {found:?}")]
    BadHeader { path: String, expected: &'static str, found: String },
    #[error("{path}: {msg}")]
    Malformed { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RowError {
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("bad {field}: {value:?}")]
    BadField { field: &'static str, value: String },
    #[error("data_length {dlc} does not match {bytes} payload bytes")]
    LengthMismatch { dlc: usize, bytes: usize },
    #[error("unterminated final line")]
    Torn,
}

/// Rows that parsed plus a tally of those that did not.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub rows: Vec<T>,
    pub rejected: u64,
    /// 1-based line numbers of rejected rows, header being line 1.
    pub rejected_lines: Vec<u64>,
    /// Whether the last line was missing its terminator.
    pub torn_tail: bool,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Parsed { rows: Vec::new(), rejected: 0, rejected_lines: Vec::new(), torn_tail: false }
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &'static str) -> Result<T, RowError> {
    let raw = rec.get(i).unwrap_or_default();
    raw.parse().map_err(|_| RowError::BadField { field: name, value: raw.to_string() })
}

fn finite(rec: &csv::StringRecord, i: usize, name: &'static str) -> Result<f64, RowError> {
    let v: f64 = field(rec, i, name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RowError::BadField { field: name, value: rec.get(i).unwrap_or_default().to_string() })
    }
}

fn expect_fields(rec: &csv::StringRecord, n: usize) -> Result<(), RowError> {
    if rec.len() == n {
        Ok(())
    } else {
        Err(RowError::FieldCount { expected: n, found: rec.len() })
    }
}

fn ts(rec: &csv::StringRecord, i: usize) -> Result<Timestamp, RowError> {
    field::<u64>(rec, i, "ts_micro").map(Timestamp::from_micros)
}

/// Splits file content at the last newline. The remainder, if any, is a torn line.
fn complete_part(bytes: &[u8]) -> (&[u8], bool) {
    match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) if i + 1 == bytes.len() => (bytes, false),
        Some(i) => (&bytes[..=i], true),
        None => (&[][..], !bytes.is_empty()),
    }
}

/// Parses CSV text with a fixed header. A file with no bytes at all is an
/// empty table.
pub fn parse_csv<T>(
    bytes: &[u8],
    path: &str,
    header: &'static str,
    parse: impl Fn(&csv::StringRecord) -> Result<T, RowError>,
) -> Result<Parsed<T>, FormatError> {
    let mut out = Parsed::default();
    if bytes.is_empty() {
        return Ok(out);
    }
    let (complete, torn) = complete_part(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(complete);
    let mut records = reader.records();
    match records.next() {
        Some(Ok(h)) if h.iter().collect::<Vec<_>>().join(",") == header => {}
        Some(Ok(h)) => {
            return Err(FormatError::BadHeader {
                path: path.to_string(),
                expected: header,
                found: h.iter().collect::<Vec<_>>().join(","),
            })
        }
        Some(Err(e)) => return Err(FormatError::Malformed { path: path.to_string(), msg: e.to_string() }),
        None => {
            // only a torn header
            return Err(FormatError::BadHeader {
                path: path.to_string(),
                expected: header,
                found: String::from_utf8_lossy(bytes).into_owned(),
            });
        }
    }
    let mut line = 1u64;
    for rec in records {
        line += 1;
        let row = match rec {
            Ok(r) => {
                line = r.position().map_or(line, |p| p.line());
                parse(&r)
            }
            Err(_) => Err(RowError::BadField { field: "record", value: String::new() }),
        };
        match row {
            Ok(row) => out.rows.push(row),
            Err(_) => {
                out.rejected += 1;
                out.rejected_lines.push(line);
            }
        }
    }
    if torn {
        out.rejected += 1;
        out.rejected_lines.push(line + 1);
        out.torn_tail = true;
    }
    Ok(out)
}

pub fn read_csv<T>(
    path: &Path,
    header: &'static str,
    parse: impl Fn(&csv::StringRecord) -> Result<T, RowError>,
) -> Result<Parsed<T>, FormatError> {
    let bytes = fs::read(path).map_err(|source| FormatError::UnreadableFile { path: path.display().to_string(), source })?;
    parse_csv(&bytes, &path.display().to_string(), header, parse)
}

pub fn can_row(frame: &CanFrame) -> String {
    format!("{},{},{},{}", frame.ts, frame.id, frame.dlc(), hex::encode(frame.payload()))
}

/// Row for a frame straight off the bus, or the reason it cannot be logged.
pub fn bus_frame_row(frame: &BusFrame) -> Result<String, MalformedFrame> {
    CanFrame::try_from(frame.clone()).map(|f| can_row(&f))
}

pub fn parse_can_record(rec: &csv::StringRecord) -> Result<CanFrame, RowError> {
    expect_fields(rec, 4)?;
    let ts = ts(rec, 0)?;
    let id_text = rec.get(1).unwrap_or_default();
    let id = u32::from_str_radix(id_text, 16)
        .ok()
        .and_then(|raw| CanId::new(raw).ok())
        .ok_or_else(|| RowError::BadField { field: "arbitration_id", value: id_text.to_string() })?;
    let dlc: usize = field(rec, 2, "data_length")?;
    let data_text = rec.get(3).unwrap_or_default();
    let data = hex::decode(data_text).map_err(|_| RowError::BadField { field: "packet_data", value: data_text.to_string() })?;
    if dlc != data.len() {
        return Err(RowError::LengthMismatch { dlc, bytes: data.len() });
    }
    CanFrame::new(ts, id, &data).map_err(|_| RowError::BadField { field: "data_length", value: dlc.to_string() })
}

/// Frames of a raw CAN log in file order, with a count of rejected rows.
pub fn parse_raw_can_csv(path: &Path) -> Result<Parsed<CanFrame>, FormatError> {
    read_csv(path, CAN_HEADER, parse_can_record)
}

pub fn gps_row(s: &GpsSample) -> String {
    format!("{},{},{},{},{},{},{}", s.ts, s.latitude, s.longitude, s.altitude, s.speed, s.track, s.climb)
}

pub fn parse_gps_record(rec: &csv::StringRecord) -> Result<GpsSample, RowError> {
    expect_fields(rec, 7)?;
    Ok(GpsSample {
        ts: ts(rec, 0)?,
        latitude: finite(rec, 1, "latitude")?,
        longitude: finite(rec, 2, "longitude")?,
        altitude: finite(rec, 3, "altitude")?,
        speed: finite(rec, 4, "speed")?,
        track: finite(rec, 5, "track")?,
        climb: finite(rec, 6, "climb")?,
    })
}

pub fn imu_row(s: &ImuSample) -> String {
    format!("{},{},{},{},{},{},{}", s.ts, s.x_accel, s.y_accel, s.z_accel, s.roll, s.pitch, s.yaw)
}

pub fn parse_imu_record(rec: &csv::StringRecord) -> Result<ImuSample, RowError> {
    expect_fields(rec, 7)?;
    Ok(ImuSample {
        ts: ts(rec, 0)?,
        x_accel: finite(rec, 1, "x_accel")?,
        y_accel: finite(rec, 2, "y_accel")?,
        z_accel: finite(rec, 3, "z_accel")?,
        roll: finite(rec, 4, "roll")?,
        pitch: finite(rec, 5, "pitch")?,
        yaw: finite(rec, 6, "yaw")?,
    })
}

pub fn frame_row(frame: u64, ts: Timestamp) -> String {
    format!("{frame},{ts}")
}

pub fn parse_frame_record(rec: &csv::StringRecord) -> Result<FrameStamp, RowError> {
    expect_fields(rec, 2)?;
    Ok(FrameStamp { frame: field(rec, 0, "frame")?, ts: ts(rec, 1)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub ts: Timestamp,
    pub key: String,
    pub value: String,
}

pub fn diagnostic_rows(s: &DiagnosticSample) -> [String; 5] {
    [
        format!("{},external_temp_c,{}", s.ts, s.external_temp_c),
        format!("{},pmu_temp_c,{}", s.ts, s.pmu_temp_c),
        format!("{},hdd_temp_c,{}", s.ts, s.hdd_temp_c),
        format!("{},power_w,{}", s.ts, s.power_w),
        format!("{},free_disk_bytes,{}", s.ts, s.free_disk_bytes),
    ]
}

pub fn parse_diagnostic_record(rec: &csv::StringRecord) -> Result<DiagnosticRow, RowError> {
    expect_fields(rec, 3)?;
    let key = rec.get(1).unwrap_or_default();
    if key.is_empty() {
        return Err(RowError::BadField { field: "key", value: String::new() });
    }
    Ok(DiagnosticRow { ts: ts(rec, 0)?, key: key.to_string(), value: rec.get(2).unwrap_or_default().to_string() })
}

pub fn specs_json(specs: &TripSpecs) -> String {
    let mut s = serde_json::to_string_pretty(specs).expect("specs serialize");
    s.push('\n');
    s
}

pub fn read_specs(path: &Path) -> Result<TripSpecs, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::UnreadableFile { path: path.display().to_string(), source })?;
    let specs: TripSpecs = serde_json::from_str(&text)
        .map_err(|e| FormatError::Malformed { path: path.display().to_string(), msg: e.to_string() })?;
    specs
        .validate()
        .map_err(|e| FormatError::Malformed { path: path.display().to_string(), msg: e.to_string() })?;
    Ok(specs)
}

/// Size and line count of an error file; a missing file counts as empty.
pub fn error_file_stats(path: &Path) -> io::Result<ErrorFileStats> {
    match fs::read(path) {
        Ok(bytes) => {
            let newlines = bytes.iter().filter(|&&b| b == b'\n').count() as u64;
            let tail = u64::from(!bytes.is_empty() && !bytes.ends_with(b"\n"));
            Ok(ErrorFileStats { bytes: bytes.len() as u64, lines: newlines + tail })
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(ErrorFileStats::default()),
        Err(e) => Err(e),
    }
}

/// First byte of a frame container. Real H.264 byte streams start with a
/// zero byte, so the two cannot be confused.
pub const CONTAINER_MARKER: u8 = 0xAF;

/// One length-prefixed container record.
pub fn container_record(payload: &[u8]) -> Vec<u8> {
    let len = u32::try_from(payload.len()).expect("frame under 4 GiB");
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(payload);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContainerSummary {
    pub frames: u64,
    /// Bytes after the last complete record.
    pub trailing_bytes: u64,
}

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a frame container")]
    NotAContainer,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads frames out of a container stream.
pub struct ContainerReader<R> {
    inner: R,
    trailing: u64,
    done: bool,
}

impl<R: Read> ContainerReader<R> {
    pub fn new(mut inner: R) -> Result<Self, ContainerError> {
        let mut marker = [0u8; 1];
        match inner.read_exact(&mut marker) {
            Ok(()) if marker[0] == CONTAINER_MARKER => Ok(ContainerReader { inner, trailing: 0, done: false }),
            Ok(()) => Err(ContainerError::NotAContainer),
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(ContainerError::NotAContainer),
            Err(e) => Err(e.into()),
        }
    }

    pub fn trailing_bytes(&self) -> u64 {
        self.trailing
    }

    fn read_up_to(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(filled)
    }
}

impl<R: Read> Iterator for ContainerReader<R> {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut len = [0u8; 4];
        let got = match self.read_up_to(&mut len) {
            Ok(n) => n,
            Err(e) => return Some(Err(e)),
        };
        if got < 4 {
            self.trailing = got as u64;
            self.done = true;
            return None;
        }
        let len = u32::from_le_bytes(len) as usize;
        let mut payload = Vec::new();
        match (&mut self.inner).take(len as u64).read_to_end(&mut payload) {
            Ok(n) if n == len => Some(Ok(payload)),
            Ok(n) => {
                self.trailing = 4 + n as u64;
                self.done = true;
                None
            }
            Err(e) => Some(Err(e)),
        }
    }
}

pub fn summarize_container(path: &Path) -> Result<ContainerSummary, ContainerError> {
    let file = io::BufReader::new(fs::File::open(path)?);
    let mut reader = ContainerReader::new(file)?;
    let mut frames = 0u64;
    for frame in reader.by_ref() {
        frame?;
        frames += 1;
    }
    Ok(ContainerSummary { frames, trailing_bytes: reader.trailing_bytes() })
}

pub fn write_container_header(w: &mut impl Write) -> io::Result<()> {
    w.write_all(&[CONTAINER_MARKER])
}

pub const DECODE_TABLE_MAGIC: &str = "avt-decode-table";
pub const DECODE_TABLE_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeTableError {
    #[error("missing or unsupported header line (expected \"{DECODE_TABLE_MAGIC} {DECODE_TABLE_VERSION}\")")]
    Header,
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error(transparent)]
    Table(#[from] SignalError),
}

/// Parses the text decode-table format:
///
/// ```text
/// avt-decode-table 1
/// # name  id     start len order sign scale offset unit
/// speed   0x155  0     16  le    u    0.01  0      m/s
/// ```
pub fn parse_decode_table(text: &str) -> Result<DecodeTable, DecodeTableError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let header = lines.by_ref().find(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match header.map(|(_, l)| l.split_whitespace().collect::<Vec<_>>()) {
        Some(h) if h.len() == 2 && h[0] == DECODE_TABLE_MAGIC && h[1].parse() == Ok(DECODE_TABLE_VERSION) => {}
        _ => return Err(DecodeTableError::Header),
    }
    let mut specs = Vec::new();
    for (line, text) in lines {
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let bad = |msg: String| DecodeTableError::Line { line, msg };
        let f: Vec<&str> = text.split_whitespace().collect();
        if !(8..=9).contains(&f.len()) {
            return Err(bad(format!("expected 8 or 9 fields, found {}", f.len())));
        }
        let id: CanId = f[1].parse().map_err(|_| bad(format!("bad id {:?}", f[1])))?;
        let start_bit: u8 = f[2].parse().map_err(|_| bad(format!("bad start bit {:?}", f[2])))?;
        let bit_length: u8 = f[3].parse().map_err(|_| bad(format!("bad length {:?}", f[3])))?;
        let byte_order = match f[4] {
            "le" => ByteOrder::Little,
            "be" => ByteOrder::Big,
            other => return Err(bad(format!("byte order must be le or be, found {other:?}"))),
        };
        let signed = match f[5] {
            "u" => false,
            "s" => true,
            other => return Err(bad(format!("sign must be u or s, found {other:?}"))),
        };
        let scale: f64 = f[6].parse().map_err(|_| bad(format!("bad scale {:?}", f[6])))?;
        let offset: f64 = f[7].parse().map_err(|_| bad(format!("bad offset {:?}", f[7])))?;
        let spec = SignalSpec {
            name: f[0].to_string(),
            id,
            start_bit,
            bit_length,
            byte_order,
            signed,
            scale,
            offset,
            unit: f.get(8).map_or(String::new(), |u| (*u).to_string()),
        };
        spec.validate().map_err(|e| bad(e.to_string()))?;
        specs.push(spec);
    }
    Ok(DecodeTable::new(specs)?)
}

pub fn render_decode_table(table: &DecodeTable) -> String {
    let mut out = format!("{DECODE_TABLE_MAGIC} {DECODE_TABLE_VERSION}\n# name id start len order sign scale offset unit\n");
    for s in table.specs() {
        let order = match s.byte_order {
            ByteOrder::Little => "le",
            ByteOrder::Big => "be",
        };
        let _ = write!(
            out,
            "{} 0x{} {} {} {} {} {:?} {:?}",
            s.name,
            s.id,
            s.start_bit,
            s.bit_length,
            order,
            if s.signed { "s" } else { "u" },
            s.scale,
            s.offset
        );
        if !s.unit.is_empty() {
            let _ = write!(out, " {}", s.unit);
        }
        out.push('\n');
    }
    out
}

pub fn load_decode_table(path: &Path) -> anyhow::Result<DecodeTable> {
    let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    parse_decode_table(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use avt_core::sim::default_decode_table;
    use proptest::prelude::*;

    fn can_rows(text: &str) -> Parsed<CanFrame> {
        parse_csv(text.as_bytes(), "t", CAN_HEADER, parse_can_record).unwrap()
    }

    #[test]
    fn can_row_format() {
        let f = CanFrame::new(100.into(), CanId::new(0x155).unwrap(), &[0x10, 0x27, 0, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(can_row(&f), "100,155,8,1027000000000000");
        let parsed = can_rows("ts_micro,arbitration_id,data_length,packet_data\n100,155,8,1027000000000000\n");
        assert_eq!(parsed.rows, vec![f]);
        assert_eq!(parsed.rejected, 0);
    }

    #[test]
    fn empty_file_is_an_empty_log() {
        let parsed = can_rows("");
        assert!(parsed.rows.is_empty());
        assert_eq!(parsed.rejected, 0);
    }

    #[test]
    fn torn_final_row_is_rejected() {
        let parsed = can_rows("ts_micro,arbitration_id,data_length,packet_data\n100,155,8,1027000000000000\n200,155,8,10");
        assert_eq!(parsed.rows.len(), 1);
        assert_eq!(parsed.rejected, 1);
        assert!(parsed.torn_tail);
        // the same row terminated is still rejected on the length mismatch
        let parsed = can_rows("ts_micro,arbitration_id,data_length,packet_data\n200,155,8,10\n");
        assert_eq!((parsed.rows.len(), parsed.rejected, parsed.torn_tail), (0, 1, false));
    }

    #[test]
    fn spaced_header_is_accepted() {
        let parsed = can_rows("ts_micro, arbitration_id, data_length, packet_data\n1, 25, 2, 0a0b\n");
        assert_eq!(parsed.rows.len(), 1);
        assert_eq!(parsed.rows[0].payload(), &[0x0a, 0x0b]);
    }

    #[test]
    fn wrong_header_is_an_error() {
        assert!(matches!(
            parse_csv(b"a,b\n", "t", CAN_HEADER, parse_can_record),
            Err(FormatError::BadHeader { .. })
        ));
    }

    #[test]
    fn rejects_bad_rows_and_keeps_going() {
        let parsed = can_rows(
            "ts_micro,arbitration_id,data_length,packet_data\n1,zz,1,00\n2,155,1,00\n3,155\n-4,155,1,00\n5,155,1,0g\n6,155,1,01\n",
        );
        assert_eq!(parsed.rows.iter().map(|f| f.ts.as_micros()).collect::<Vec<_>>(), vec![2, 6]);
        assert_eq!(parsed.rejected_lines, vec![2, 4, 5, 6]);
    }

    #[test]
    fn container_round_trip_and_torn_tail() {
        let mut buf = Vec::new();
        write_container_header(&mut buf).unwrap();
        for i in 0..5u8 {
            buf.extend(container_record(&vec![i; i as usize * 3]));
        }
        let frames: Vec<Vec<u8>> = ContainerReader::new(&buf[..]).unwrap().map(Result::unwrap).collect();
        assert_eq!(frames.len(), 5);
        assert_eq!(frames[4], vec![4; 12]);

        buf.extend_from_slice(&[9, 0, 0, 0, 1, 2]);
        let mut reader = ContainerReader::new(&buf[..]).unwrap();
        assert_eq!(reader.by_ref().count(), 5);
        assert_eq!(reader.trailing_bytes(), 6);

        assert!(matches!(ContainerReader::new(&[0u8, 0, 0, 1][..]), Err(ContainerError::NotAContainer)));
    }

    #[test]
    fn decode_table_text_round_trip() {
        let table = default_decode_table();
        let text = render_decode_table(&table);
        assert!(text.starts_with("avt-decode-table 1\n"));
        assert_eq!(parse_decode_table(&text).unwrap(), table);
    }

    #[test]
    fn decode_table_errors() {
        assert_eq!(parse_decode_table("speed 0x155 0 16 le u 0.01 0"), Err(DecodeTableError::Header));
        assert_eq!(parse_decode_table("avt-decode-table 2\n"), Err(DecodeTableError::Header));
        let e = parse_decode_table("avt-decode-table 1\n\nspeed 0x155 0 16 xx u 0.01 0\n").unwrap_err();
        assert!(matches!(e, DecodeTableError::Line { line: 3, .. }));
        let e = parse_decode_table("avt-decode-table 1\na 1 60 8 le u 1 0\n").unwrap_err();
        assert!(matches!(e, DecodeTableError::Line { line: 2, .. }));
        let e = parse_decode_table("avt-decode-table 1\na 1 0 8 le u 1 0\na 2 0 8 le u 1 0\n").unwrap_err();
        assert!(matches!(e, DecodeTableError::Table(_)));
    }

    #[test]
    fn error_file_line_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.error");
        assert_eq!(error_file_stats(&p).unwrap(), ErrorFileStats::default());
        fs::write(&p, "a\nb\nc").unwrap();
        assert_eq!(error_file_stats(&p).unwrap(), ErrorFileStats { bytes: 5, lines: 3 });
    }

    fn arb_frame() -> impl Strategy<Value = CanFrame> {
        (any::<u64>(), 0u32..=CanId::MAX, proptest::collection::vec(any::<u8>(), 0..=8))
            .prop_map(|(ts, id, data)| CanFrame::new(ts.into(), CanId::new(id).unwrap(), &data).unwrap())
    }

    proptest! {
        #[test]
        fn can_csv_parse_inverts_write(frames in proptest::collection::vec(arb_frame(), 0..40)) {
            let mut text = format!("{CAN_HEADER}\n");
            for f in &frames {
                text.push_str(&can_row(f));
                text.push('\n');
            }
            let parsed = can_rows(&text);
            prop_assert_eq!(parsed.rejected, 0);
            prop_assert_eq!(parsed.rows, frames);
        }

        #[test]
        fn gps_rows_round_trip(ts in any::<u64>(), lat in -90.0f64..90.0, lon in -180.0f64..180.0, v in 0.0f64..80.0) {
            let s = GpsSample { ts: ts.into(), latitude: lat, longitude: lon, altitude: 12.25, speed: v, track: 271.5, climb: -0.125 };
            let text = format!("{GPS_HEADER}\n{}\n", gps_row(&s));
            let parsed = parse_csv(text.as_bytes(), "t", GPS_HEADER, parse_gps_record).unwrap();
            prop_assert_eq!(parsed.rows, vec![s]);
        }

        #[test]
        fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
            let mut text = format!("{CAN_HEADER}\n").into_bytes();
            text.extend(bytes);
            let _ = parse_csv(&text, "t", CAN_HEADER, parse_can_record);
            let _ = parse_decode_table(&String::from_utf8_lossy(&text));
            let _ = ContainerReader::new(&text[..]).map(|r| r.count());
        }
    }
}
