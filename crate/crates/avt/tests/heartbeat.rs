mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use avt_core::health::{FleetStatus, GpsFix, LogEntry, StatusReport, Temperatures, REPORT_VERSION};
use avt_core::Timestamp;

use avt::catalog::Catalog;
use avt::telemetry::heartbeat::{heartbeat_router, HeartbeatState, RiderHistory, POLL_HEADER};

use common::*;

const NOW: u64 = START_US + 3_600_000_000;
const TB: u64 = 1 << 40;

fn entry(rider_id: u32, seq: u64, age_s: u64, free: u64, interval_s: f64) -> LogEntry {
    let ts = Timestamp::from_micros(NOW - age_s * 1_000_000);
    LogEntry {
        received_ts: ts,
        report: StatusReport {
            version: REPORT_VERSION,
            rider_id,
            seq,
            sent_ts: ts,
            trip: None,
            gps: Some(GpsFix { lat: 42.36, lon: -71.09 }),
            power_w: 11.0,
            temperatures: Temperatures { external_c: 20.0, pmu_c: 35.0, hdd_c: 30.0 },
            free_disk_bytes: free,
            disk_capacity_bytes: TB,
            lighthouse_interval_s: interval_s,
        },
    }
}

/// Rider 1 is fresh with 40% free, rider 2 is stale, rider 3 is nearly full.
fn app() -> (Router, Arc<Catalog>) {
    let catalog = Arc::new(Catalog::open_in_memory().unwrap());
    catalog.apply_fleet(&fleet(&[(1, 11), (2, 12), (3, 13), (4, 14)])).unwrap();
    for e in [entry(1, 1, 120, TB * 2 / 5, 60.0), entry(1, 2, 30, TB * 2 / 5, 60.0), entry(2, 1, 600, TB / 2, 120.0), entry(3, 1, 10, TB / 20, 30.0)] {
        assert!(catalog.append_homebase(&e).unwrap());
    }
    let mut state = HeartbeatState::new(catalog.clone());
    state.clock = Arc::new(|| Timestamp::from_micros(NOW));
    (heartbeat_router(state), catalog)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Option<String>, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let poll = resp.headers().get(POLL_HEADER).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, poll, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: &str) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
}

async fn fleet_status(app: &Router) -> FleetStatus {
    let (status, _, body) = send(app, get("/fleet")).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_value(body).unwrap()
}

#[tokio::test]
async fn fleet_snapshot_flags_and_poll_interval() {
    let (app, _) = app();
    let (status, poll, body) = send(&app, get("/fleet")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(poll.as_deref(), Some("30"));
    let fleet: FleetStatus = serde_json::from_value(body).unwrap();
    assert_eq!(fleet.generated_ts, Timestamp::from_micros(NOW));
    let flags: Vec<(u32, bool, bool)> = fleet.riders.iter().map(|r| (r.rider_id, r.stale, r.needs_drive_swap)).collect();
    assert_eq!(flags, vec![(1, false, false), (2, true, false), (3, false, true)]);
    assert_eq!(fleet.riders[0].health.report_count, 2);
    assert_eq!(fleet.riders[0].last_report_age_us, 30_000_000);
}

#[tokio::test]
async fn drive_swap_clears_flag_on_next_poll() {
    let (app, catalog) = app();
    let (status, _, body) = send(&app, post("/riders/3/maintenance", r#"{"action":"drive_swap","note":"swapped 2TB"}"#)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["action"], json!("drive_swap"));
    assert_eq!(body["rider_id"], json!(3));
    assert!(!fleet_status(&app).await.riders.iter().any(|r| r.needs_drive_swap));
    assert_eq!(catalog.maintenance_log(Some(3)).unwrap().len(), 1);
}

#[tokio::test]
async fn repair_note_is_optional() {
    let (app, _) = app();
    let (status, _, body) = send(&app, post("/riders/4/maintenance", r#"{"action":"repair"}"#)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["note"], json!(""));
}

#[tokio::test]
async fn bad_requests_change_nothing() {
    let (app, catalog) = app();
    for (uri, body, want) in [
        ("/riders/99/maintenance", r#"{"action":"repair"}"#, StatusCode::NOT_FOUND),
        ("/riders/abc/maintenance", r#"{"action":"repair"}"#, StatusCode::BAD_REQUEST),
        ("/riders/1/maintenance", r#"{"action":"polish"}"#, StatusCode::BAD_REQUEST),
        ("/riders/1/maintenance", "{not json", StatusCode::BAD_REQUEST),
    ] {
        let (status, _, err) = send(&app, post(uri, body)).await;
        assert_eq!(status, want, "{uri} {body}");
        assert!(err["error"].is_string(), "{err}");
    }
    assert!(catalog.maintenance_log(None).unwrap().is_empty());
}

#[tokio::test]
async fn history_lists_reports_and_maintenance() {
    let (app, _) = app();
    send(&app, post("/riders/1/maintenance", r#"{"action":"repair","note":"fan"}"#)).await;
    let (status, _, body) = send(&app, get("/riders/1/history")).await;
    assert_eq!(status, StatusCode::OK);
    let history: RiderHistory = serde_json::from_value(body).unwrap();
    assert_eq!(history.reports.iter().map(|e| e.report.seq).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(history.maintenance.len(), 1);
    assert_eq!(history.maintenance[0].note, "fan");

    // on the roster but never reported
    let (status, _, body) = send(&app, get("/riders/4/history")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["reports"], json!([]));

    assert_eq!(send(&app, get("/riders/99/history")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, get("/riders/x/history")).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn empty_fleet() {
    let catalog = Arc::new(Catalog::open_in_memory().unwrap());
    let app = heartbeat_router(HeartbeatState::new(catalog));
    let (status, poll, body) = send(&app, get("/fleet")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(poll.as_deref(), Some("60"));
    assert_eq!(body["riders"], json!([]));
}
