//! JSON-over-HTTP interface used by the SMS gateway and the operator console.

use std::sync::Arc;
use std::time::Duration as StdDuration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Duration;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::clock::{Clock, VirtualClock, WallClock};
use super::{ClockMode, Config, Service, ServiceError, SharedService};
use crate::dispatch::DispatchError;
use crate::messaging::encode_outbound;
use crate::registry::{PhoneId, RegistryError};
use crate::scheduler::{AdviceTarget, Advisor, MdFields, SchedulerError};

pub const DEFAULT_DRAIN: usize = 50;

#[derive(Clone)]
pub struct AppState {
    pub service: SharedService,
    clock: Arc<dyn Clock>,
    virtual_clock: Option<Arc<VirtualClock>>,
}

impl AppState {
    pub fn with_virtual_clock(service: SharedService, clock: Arc<VirtualClock>) -> Self {
        Self { service, clock: clock.clone(), virtual_clock: Some(clock) }
    }

    pub fn with_wall_clock(service: SharedService) -> Self {
        Self { service, clock: Arc::new(WallClock), virtual_clock: None }
    }

    pub fn now(&self) -> chrono::NaiveDateTime {
        self.clock.now()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::Registry(RegistryError::UnknownWoman(_))
            | ServiceError::Scheduler(SchedulerError::UnknownWoman(_))
            | ServiceError::Dispatch(DispatchError::UnknownWoman(_) | DispatchError::UnknownOrder(_)) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::Scheduler(SchedulerError::SeqConflict { .. })
            | ServiceError::Dispatch(DispatchError::AlreadyClosed(_))
            | ServiceError::Registry(RegistryError::NotRegisteredThere { .. }) => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn phone(raw: &str) -> ApiResult<PhoneId> {
    raw.parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("`{raw}` is not a phone number")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/gateway/inbound", post(inbound))
        .route("/outbox", get(outbox))
        .route("/women", get(women))
        .route("/women/{phone}", get(woman))
        .route("/women/{phone}/release", post(release))
        .route("/reviews/{phone}", post(review))
        .route("/advice", get(advice_ledger).post(advice))
        .route("/dispatch", get(orders))
        .route("/dispatch/{id}/close", post(close_order))
        .route("/facilities.geojson", get(facilities))
        .route("/dead-letters", get(dead_letters))
        .route("/clock", get(clock_now))
        .route("/clock/tick", post(tick))
        .with_state(state)
}

#[derive(Serialize)]
struct Replies {
    replies: Vec<String>,
}

fn lines(msgs: &[crate::messaging::OutboundMessage]) -> Vec<String> {
    msgs.iter().filter_map(|m| encode_outbound(m).ok()).collect()
}

async fn inbound(State(st): State<AppState>, body: Bytes) -> Json<Replies> {
    let out = st.service.ingest(&body, st.now());
    Json(Replies { replies: lines(&out) })
}

#[derive(Deserialize)]
struct DrainQuery {
    max: Option<usize>,
}

async fn outbox(State(st): State<AppState>, Query(q): Query<DrainQuery>) -> ApiResult<Json<Value>> {
    let now = st.now();
    let out = st.service.lock().drain_outbox(q.max.unwrap_or(DEFAULT_DRAIN), now)?;
    Ok(Json(json!(out)))
}

async fn women(State(st): State<AppState>) -> Json<Value> {
    let svc = st.service.lock();
    Json(json!(svc.registry().women().collect::<Vec<_>>()))
}

async fn woman(State(st): State<AppState>, Path(raw): Path<String>) -> ApiResult<Json<Value>> {
    let phone = phone(&raw)?;
    let svc = st.service.lock();
    let record = svc.registry().lookup(&phone).map_err(ServiceError::from)?;
    Ok(Json(json!({
        "woman": record,
        "care_file": svc.scheduler().file(&phone),
        "reviews": svc.scheduler().reviews(&phone),
    })))
}

async fn release(State(st): State<AppState>, Path(raw): Path<String>) -> ApiResult<StatusCode> {
    let phone = phone(&raw)?;
    let now = st.now();
    let mut svc = st.service.lock();
    let facility = svc.registry().lookup_active(&phone).map_err(ServiceError::from)?.assigned_facility;
    svc.release_slot(facility, &phone, now)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn review(
    State(st): State<AppState>,
    Path(raw): Path<String>,
    Json(md): Json<MdFields>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let phone = phone(&raw)?;
    let now = st.now();
    let record = st.service.lock().record_review(&phone, md, now)?;
    Ok((StatusCode::CREATED, Json(json!(record))))
}

#[derive(Deserialize)]
struct AdviceRequest {
    who: Advisor,
    /// `ALL` or a phone number.
    target: String,
    text: String,
}

async fn advice(State(st): State<AppState>, Json(req): Json<AdviceRequest>) -> ApiResult<Json<Replies>> {
    let target: AdviceTarget = req
        .target
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let now = st.now();
    let out = st.service.lock().compose_advice(req.who, target, &req.text, now)?;
    Ok(Json(Replies { replies: lines(&out) }))
}

async fn advice_ledger(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.service.lock().scheduler().ledger()))
}

async fn orders(State(st): State<AppState>) -> Json<Value> {
    let svc = st.service.lock();
    Json(json!(svc.dispatcher().orders().collect::<Vec<_>>()))
}

#[derive(Deserialize)]
struct CloseRequest {
    outcome: String,
}

async fn close_order(
    State(st): State<AppState>,
    Path(id): Path<u64>,
    Json(req): Json<CloseRequest>,
) -> ApiResult<Json<Value>> {
    let now = st.now();
    let order = st.service.lock().close_order(id, &req.outcome, now)?;
    Ok(Json(json!(order)))
}

async fn facilities(State(st): State<AppState>) -> Json<Value> {
    Json(st.service.lock().registry().to_geojson())
}

async fn dead_letters(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.service.lock().dead_letters()))
}

async fn clock_now(State(st): State<AppState>) -> Json<Value> {
    Json(json!({ "now": st.now(), "virtual": st.virtual_clock.is_some() }))
}

#[derive(Deserialize, Default)]
struct TickRequest {
    #[serde(default = "one")]
    days: u32,
}

fn one() -> u32 {
    1
}

/// Advances the virtual clock day by day, running the scheduler each day.
async fn tick(State(st): State<AppState>, body: Option<Json<TickRequest>>) -> ApiResult<Json<Value>> {
    let Some(clock) = &st.virtual_clock else {
        return Err(ApiError::new(StatusCode::CONFLICT, "clock is wall time; ticks are automatic"));
    };
    let days = body.map_or(1, |Json(b)| b.days);
    let mut svc = st.service.lock();
    let mut sent = Vec::new();
    for _ in 0..days {
        let now = clock.advance(Duration::days(1));
        sent.extend(svc.tick(now));
    }
    Ok(Json(json!({ "now": clock.now(), "queued": lines(&sent) })))
}

/// Runs the HTTP server until Ctrl-C. In wall-clock mode the scheduler is
/// ticked every `wall_tick` interval.
pub async fn serve(config: Config, wall_tick: StdDuration) -> Result<(), ServiceError> {
    let state = match config.clock_mode {
        ClockMode::Virtual => {
            let clock = Arc::new(VirtualClock::new(config.virtual_start));
            let service = SharedService::new(Service::from_config(&config, clock.now())?);
            AppState::with_virtual_clock(service, clock)
        }
        ClockMode::Wall => {
            let service = SharedService::new(Service::from_config(&config, WallClock.now())?);
            let ticker = service.clone();
            tokio::spawn(async move {
                let mut interval = tokio::time::interval(wall_tick);
                loop {
                    interval.tick().await;
                    ticker.lock().tick(WallClock.now());
                }
            });
            AppState::with_wall_clock(service)
        }
    };
    let listener = tokio::net::TcpListener::bind(&config.listen_addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
