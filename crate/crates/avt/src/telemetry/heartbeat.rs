//! Read-mostly HTTP API over the homebase and maintenance logs.
//!
//! - `GET /fleet`: current [`FleetStatus`]
//! - `GET /riders/{id}/history`: every report and maintenance event of a rider
//! - `POST /riders/{id}/maintenance` with `{"action": "drive_swap"|"repair", "note": "..."}`

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use avt_core::health::{heartbeat_snapshot, FleetStatus, HeartbeatThresholds, LogEntry, MaintenanceAction, MaintenanceEvent};
use avt_core::Timestamp;

use crate::catalog::{Catalog, CatalogError};

pub const POLL_HEADER: &str = "x-poll-interval-s";
const DEFAULT_POLL_S: f64 = 60.0;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

#[derive(Clone)]
pub struct HeartbeatState {
    pub catalog: Arc<Catalog>,
    pub thresholds: HeartbeatThresholds,
    pub clock: Clock,
}

impl HeartbeatState {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        HeartbeatState { catalog, thresholds: HeartbeatThresholds::default(), clock: Arc::new(super::now) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiderHistory {
    pub rider_id: u32,
    pub reports: Vec<LogEntry>,
    pub maintenance: Vec<MaintenanceEvent>,
}

#[derive(Debug, Deserialize)]
struct MaintenanceRequest {
    action: String,
    #[serde(default)]
    note: String,
}

enum ApiError {
    BadRequest(String),
    NotFound(String),
    Internal(String),
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": msg }))).into_response()
    }
}

pub fn heartbeat_router(state: HeartbeatState) -> Router {
    Router::new()
        .route("/fleet", get(fleet))
        .route("/riders/{id}/history", get(history))
        .route("/riders/{id}/maintenance", post(maintenance))
        .with_state(state)
}

pub fn fleet_status(state: &HeartbeatState) -> Result<FleetStatus, CatalogError> {
    let log = state.catalog.homebase_log(None)?;
    let events = state.catalog.maintenance_log(None)?;
    Ok(heartbeat_snapshot(&log, &events, &state.thresholds, (state.clock)()))
}

async fn fleet(State(state): State<HeartbeatState>) -> Result<Response, ApiError> {
    let status = fleet_status(&state)?;
    let poll = status.riders.iter().map(|r| r.lighthouse_interval_s).filter(|s| *s > 0.0).reduce(f64::min).unwrap_or(DEFAULT_POLL_S);
    let mut resp = Json(status).into_response();
    resp.headers_mut().insert(POLL_HEADER, HeaderValue::from_str(&poll.to_string()).expect("number is a valid header"));
    Ok(resp)
}

fn rider_id(raw: &str) -> Result<u32, ApiError> {
    raw.parse().map_err(|_| ApiError::BadRequest(format!("bad rider id {raw:?}")))
}

async fn history(State(state): State<HeartbeatState>, Path(id): Path<String>) -> Result<Json<RiderHistory>, ApiError> {
    let rider_id = rider_id(&id)?;
    if !state.catalog.known_rider(rider_id)? {
        return Err(ApiError::NotFound(format!("unknown rider {rider_id}")));
    }
    Ok(Json(RiderHistory {
        rider_id,
        reports: state.catalog.homebase_log(Some(rider_id))?,
        maintenance: state.catalog.maintenance_log(Some(rider_id))?,
    }))
}

async fn maintenance(
    State(state): State<HeartbeatState>,
    Path(id): Path<String>,
    body: Result<Json<MaintenanceRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<MaintenanceEvent>), ApiError> {
    let rider_id = rider_id(&id)?;
    let Json(req) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let action = MaintenanceAction::parse(&req.action).ok_or_else(|| ApiError::BadRequest(format!("unknown action {:?}", req.action)))?;
    if !state.catalog.known_rider(rider_id)? {
        return Err(ApiError::NotFound(format!("unknown rider {rider_id}")));
    }
    let event = MaintenanceEvent { rider_id, ts: (state.clock)(), action, note: req.note };
    state.catalog.record_maintenance(&event)?;
    Ok((StatusCode::CREATED, Json(event)))
}

pub async fn serve(listener: tokio::net::TcpListener, state: HeartbeatState) -> std::io::Result<()> {
    axum::serve(listener, heartbeat_router(state)).await
}
