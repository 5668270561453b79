//! Server side: authenticate, de-duplicate and log incoming reports.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

use avt_core::health::{LogEntry, ReplayGuard};
use avt_core::Timestamp;

use super::{open_envelope, DeviceRegistry, Reject, MAX_ENVELOPE_LEN};
use crate::catalog::Catalog;

const READ_TIMEOUT: Duration = Duration::from_secs(30);

pub trait LogSink {
    fn append(&mut self, entry: &LogEntry) -> Result<(), String>;
}

impl LogSink for Vec<LogEntry> {
    fn append(&mut self, entry: &LogEntry) -> Result<(), String> {
        self.push(entry.clone());
        Ok(())
    }
}

impl LogSink for Arc<Catalog> {
    fn append(&mut self, entry: &LogEntry) -> Result<(), String> {
        match Catalog::append_homebase(self, entry) {
            Ok(true) => Ok(()),
            Ok(false) => Err("duplicate sequence number".into()),
            Err(e) => Err(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HomebaseStats {
    pub accepted: u64,
    pub rejected: BTreeMap<Reject, u64>,
}

impl HomebaseStats {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }
}

pub struct Homebase<S> {
    registry: DeviceRegistry,
    guard: ReplayGuard,
    sink: S,
    stats: HomebaseStats,
}

impl<S: LogSink> Homebase<S> {
    pub fn new(registry: DeviceRegistry, sink: S) -> Self {
        Homebase { registry, guard: ReplayGuard::new(), sink, stats: HomebaseStats::default() }
    }

    /// Starts from the highest sequence number already logged per rider.
    pub fn with_history(registry: DeviceRegistry, sink: S, history: impl IntoIterator<Item = (u32, u64)>) -> Self {
        Homebase { registry, guard: ReplayGuard::with_history(history), sink, stats: HomebaseStats::default() }
    }

    pub fn stats(&self) -> &HomebaseStats {
        &self.stats
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn registry(&self) -> &DeviceRegistry {
        &self.registry
    }

    /// Handles one envelope. Every call is counted as accepted or rejected.
    pub fn receive(&mut self, envelope: &[u8], received_ts: Timestamp) -> Result<LogEntry, Reject> {
        let result = self.try_receive(envelope, received_ts);
        match &result {
            Ok(_) => self.stats.accepted += 1,
            Err(r) => *self.stats.rejected.entry(*r).or_default() += 1,
        }
        result
    }

    fn try_receive(&mut self, envelope: &[u8], received_ts: Timestamp) -> Result<LogEntry, Reject> {
        let report = open_envelope(envelope, &self.registry)?;
        self.guard.check(report.rider_id, report.seq).map_err(|_| Reject::Replay)?;
        let entry = LogEntry { received_ts, report };
        self.sink.append(&entry).map_err(|_| Reject::Storage)?;
        self.guard.accept(entry.report.rider_id, entry.report.seq).map_err(|_| Reject::Replay)?;
        Ok(entry)
    }

    /// Handles a byte stream of length-prefixed envelopes. Stops at the first
    /// framing error, which is counted once. Returns the accepted entries.
    pub fn receive_stream(&mut self, mut stream: &[u8], received_ts: Timestamp) -> Vec<LogEntry> {
        let mut accepted = Vec::new();
        while !stream.is_empty() {
            if stream.len() < 4 {
                *self.stats.rejected.entry(Reject::Truncated).or_default() += 1;
                break;
            }
            let len = u32::from_be_bytes(stream[..4].try_into().expect("sized")) as usize;
            if len > MAX_ENVELOPE_LEN {
                *self.stats.rejected.entry(Reject::Oversize).or_default() += 1;
                break;
            }
            if stream.len() < 4 + len {
                *self.stats.rejected.entry(Reject::Truncated).or_default() += 1;
                break;
            }
            if let Ok(e) = self.receive(&stream[4..4 + len], received_ts) {
                accepted.push(e);
            }
            stream = &stream[4 + len..];
        }
        accepted
    }
}

/// Prefixes an envelope with its big-endian length.
pub fn frame(envelope: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + envelope.len());
    out.extend_from_slice(&(envelope.len() as u32).to_be_bytes());
    out.extend_from_slice(envelope);
    out
}

pub type SharedHomebase<S> = Arc<Mutex<Homebase<S>>>;

/// Accepts connections until the listener fails. Each envelope gets a one
/// byte reply: 0 for accepted, otherwise [`Reject::code`].
pub async fn serve<S: LogSink + Send + 'static>(listener: TcpListener, homebase: SharedHomebase<S>) -> std::io::Result<()> {
    loop {
        let (socket, _) = listener.accept().await?;
        let hb = homebase.clone();
        tokio::spawn(async move {
            let _ = handle_connection(socket, hb).await;
        });
    }
}

async fn handle_connection<S: LogSink>(mut socket: TcpStream, homebase: SharedHomebase<S>) -> std::io::Result<()> {
    loop {
        let mut len = [0u8; 4];
        match tokio::time::timeout(READ_TIMEOUT, socket.read_exact(&mut len)).await {
            Ok(Ok(_)) => {}
            _ => return Ok(()),
        }
        let len = u32::from_be_bytes(len) as usize;
        if len > MAX_ENVELOPE_LEN {
            count(&homebase, Reject::Oversize);
            socket.write_all(&[Reject::Oversize.code()]).await?;
            return Ok(());
        }
        let mut body = vec![0u8; len];
        match tokio::time::timeout(READ_TIMEOUT, socket.read_exact(&mut body)).await {
            Ok(Ok(_)) => {}
            _ => {
                count(&homebase, Reject::Truncated);
                return Ok(());
            }
        }
        let result = {
            let mut hb = homebase.lock().unwrap_or_else(|p| p.into_inner());
            hb.receive(&body, super::now())
        };
        let code = match result {
            Ok(_) => 0,
            Err(r) => r.code(),
        };
        socket.write_all(&[code]).await?;
    }
}

fn count<S>(homebase: &SharedHomebase<S>, reason: Reject) {
    let mut hb = homebase.lock().unwrap_or_else(|p| p.into_inner());
    *hb.stats.rejected.entry(reason).or_default() += 1;
}

#[cfg(test)]
mod tests {
    use super::super::tests::{report, setup};
    use super::super::seal_report;
    use super::*;

    #[test]
    fn replay_is_rejected() {
        let (reg, server, device) = setup();
        let mut hb = Homebase::new(reg, Vec::new());
        let e1 = seal_report(&report(5, 1), &device.secret, &server.public).unwrap();
        let e2 = seal_report(&report(5, 2), &device.secret, &server.public).unwrap();
        let ts = Timestamp::from_micros(9);
        assert!(hb.receive(&e1, ts).is_ok());
        assert!(hb.receive(&e2, ts).is_ok());
        assert_eq!(hb.receive(&e1, ts), Err(Reject::Replay));
        assert_eq!(hb.receive(&e2, ts), Err(Reject::Replay));
        assert_eq!(hb.sink().len(), 2);
        assert_eq!(hb.stats().accepted, 2);
        assert_eq!(hb.stats().rejected[&Reject::Replay], 2);
    }

    #[test]
    fn history_survives_restart() {
        let (reg, server, device) = setup();
        let mut hb = Homebase::with_history(reg, Vec::new(), [(5, 10)]);
        let old = seal_report(&report(5, 10), &device.secret, &server.public).unwrap();
        let new = seal_report(&report(5, 11), &device.secret, &server.public).unwrap();
        assert_eq!(hb.receive(&old, Timestamp::ZERO), Err(Reject::Replay));
        assert!(hb.receive(&new, Timestamp::ZERO).is_ok());
    }

    #[test]
    fn storage_failure_does_not_advance_sequence() {
        struct Failing(bool);
        impl LogSink for Failing {
            fn append(&mut self, _: &LogEntry) -> Result<(), String> {
                if self.0 {
                    Err("disk".into())
                } else {
                    Ok(())
                }
            }
        }
        let (reg, server, device) = setup();
        let mut hb = Homebase::new(reg, Failing(true));
        let e = seal_report(&report(5, 1), &device.secret, &server.public).unwrap();
        assert_eq!(hb.receive(&e, Timestamp::ZERO), Err(Reject::Storage));
        hb.sink.0 = false;
        assert!(hb.receive(&e, Timestamp::ZERO).is_ok());
    }

    #[test]
    fn stream_framing() {
        let (reg, server, device) = setup();
        let mut hb = Homebase::new(reg, Vec::new());
        let mut stream = Vec::new();
        for seq in 1..=3 {
            stream.extend(frame(&seal_report(&report(5, seq), &device.secret, &server.public).unwrap()));
        }
        stream.extend_from_slice(&[0, 0]);
        assert_eq!(hb.receive_stream(&stream, Timestamp::ZERO).len(), 3);
        assert_eq!(hb.stats().rejected[&Reject::Truncated], 1);
        assert!(hb.receive_stream(&u32::MAX.to_be_bytes(), Timestamp::ZERO).is_empty());
        assert_eq!(hb.stats().rejected[&Reject::Oversize], 1);
    }

    #[test]
    fn catalog_sink_refuses_duplicates() {
        let (reg, server, device) = setup();
        let catalog = Arc::new(Catalog::open_in_memory().unwrap());
        let mut hb = Homebase::new(reg, catalog.clone());
        let e = seal_report(&report(5, 1), &device.secret, &server.public).unwrap();
        hb.receive(&e, Timestamp::ZERO).unwrap();
        assert_eq!(catalog.homebase_log(Some(5)).unwrap().len(), 1);
        let mut reg = DeviceRegistry::new(&server.secret).unwrap();
        reg.register(5, &device.public).unwrap();
        let mut restarted = Homebase::with_history(reg, catalog.clone(), catalog.last_sequences().unwrap());
        assert_eq!(restarted.receive(&e, Timestamp::ZERO), Err(Reject::Replay));
        let mut unguarded = Homebase::new(restarted.registry, catalog.clone());
        assert_eq!(unguarded.receive(&e, Timestamp::ZERO), Err(Reject::Storage));
        assert_eq!(catalog.homebase_log(Some(5)).unwrap().len(), 1);
    }
}
