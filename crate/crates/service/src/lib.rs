//! HTTP front end. Every compute route delegates to `mrtss::protocol`, and
//! successful results are appended to the caller's session history.
//!
//! Sessions are identified by the `mrtss_session` cookie or an
//! `x-session-id` header and live in memory until idle for the configured
//! time to live.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::header::{CONTENT_TYPE, COOKIE, SET_COOKIE};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};

use mrtss::design::{build_design, parse_probability_csv, RandomizationSchedule, ScheduleMode};
use mrtss::protocol::{
    compute_power, compute_sample_size, preview_rows, results_csv, trend_preview, ApiError, ComputeResult,
    PowerRequest, SampleSizeRequest, UploadResponse,
};
use mrtss::simulate::{run_scenario, FitOptions, Scenario, ScenarioReport};
use mrtss::trends::{TrendRole, TrendSpec};

pub const SESSION_COOKIE: &str = "mrtss_session";
pub const SESSION_HEADER: &str = "x-session-id";
pub const BIND_ENV: &str = "MRTSS_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_TTL: Duration = Duration::from_secs(2 * 60 * 60);
/// Upper bound on replications accepted by the simulate route.
pub const MAX_REPLICATIONS: u32 = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub seq: usize,
    pub timestamp: String,
    pub result: ComputeResult,
}

struct Session {
    entries: Vec<HistoryEntry>,
    last_seen: Instant,
}

struct Upload {
    schedule: RandomizationSchedule,
    created: Instant,
}

struct Inner {
    sessions: HashMap<String, Session>,
    uploads: HashMap<String, Upload>,
}

/// Shared state: session histories and uploaded schedules.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<Inner>>,
    ttl: Duration,
}

impl Default for AppState {
    fn default() -> Self {
        Self::with_ttl(DEFAULT_TTL)
    }
}

impl AppState {
    pub fn with_ttl(ttl: Duration) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                sessions: HashMap::new(),
                uploads: HashMap::new(),
            })),
            ttl,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn prune(&self, inner: &mut Inner) {
        let now = Instant::now();
        inner.sessions.retain(|_, s| now.duration_since(s.last_seen) < self.ttl);
        inner.uploads.retain(|_, u| now.duration_since(u.created) < self.ttl);
    }

    /// Returns the session id to use, creating a session when the given id
    /// is absent or expired.
    fn touch(&self, requested: Option<String>) -> (String, bool) {
        let mut inner = self.lock();
        self.prune(&mut inner);
        if let Some(id) = requested {
            if let Some(s) = inner.sessions.get_mut(&id) {
                s.last_seen = Instant::now();
                return (id, false);
            }
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        inner.sessions.insert(
            id.clone(),
            Session {
                entries: Vec::new(),
                last_seen: Instant::now(),
            },
        );
        (id, true)
    }

    fn append(&self, session: &str, result: ComputeResult) {
        let mut inner = self.lock();
        let s = inner.sessions.entry(session.to_string()).or_insert_with(|| Session {
            entries: Vec::new(),
            last_seen: Instant::now(),
        });
        s.last_seen = Instant::now();
        let seq = s.entries.len() + 1;
        s.entries.push(HistoryEntry {
            seq,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            result,
        });
    }

    fn history(&self, session: &str) -> Vec<HistoryEntry> {
        self.lock()
            .sessions
            .get(session)
            .map(|s| s.entries.clone())
            .unwrap_or_default()
    }

    fn store_upload(&self, schedule: RandomizationSchedule) -> String {
        let token = uuid::Uuid::new_v4().simple().to_string();
        self.lock().uploads.insert(
            token.clone(),
            Upload {
                schedule,
                created: Instant::now(),
            },
        );
        token
    }

    fn upload(&self, token: &str) -> Option<RandomizationSchedule> {
        self.lock().uploads.get(token).map(|u| u.schedule.clone())
    }
}

fn requested_session(headers: &HeaderMap) -> Option<String> {
    if let Some(v) = headers.get(SESSION_HEADER).and_then(|v| v.to_str().ok()) {
        if !v.is_empty() {
            return Some(v.to_string());
        }
    }
    headers
        .get_all(COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|pair| pair.trim().split_once('='))
        .find(|(k, _)| *k == SESSION_COOKIE)
        .map(|(_, v)| v.to_string())
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(CONTENT_TYPE, "application/json")], body).into_response()
}

fn error_response(e: &ApiError) -> Response {
    let status = StatusCode::from_u16(e.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    json_response(status, e.to_json())
}

/// Attaches the session id as both a cookie and a response header.
fn with_session(mut resp: Response, id: &str, fresh: bool) -> Response {
    if let Ok(v) = HeaderValue::from_str(id) {
        resp.headers_mut().insert(SESSION_HEADER, v);
    }
    if fresh {
        let cookie = format!("{SESSION_COOKIE}={id}; Path=/; HttpOnly; SameSite=Lax");
        if let Ok(v) = HeaderValue::from_str(&cookie) {
            resp.headers_mut().insert(SET_COOKIE, v);
        }
    }
    resp
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(ApiError::invalid_json)
}

async fn samplesize(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let (sid, fresh) = state.touch(requested_session(&headers));
    let outcome = parse_json::<SampleSizeRequest>(&body).and_then(|req| {
        let design = req.design.resolve(|t| state.upload(t))?;
        compute_sample_size(&req, design)
    });
    let resp = match outcome {
        Ok(r) => {
            let result = ComputeResult::SampleSize(r);
            let body = result.to_json();
            state.append(&sid, result);
            json_response(StatusCode::OK, body)
        }
        Err(e) => error_response(&e),
    };
    with_session(resp, &sid, fresh)
}

async fn power(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let (sid, fresh) = state.touch(requested_session(&headers));
    let outcome = parse_json::<PowerRequest>(&body).and_then(|req| {
        let design = req.design.resolve(|t| state.upload(t))?;
        compute_power(&req, design)
    });
    let resp = match outcome {
        Ok(r) => {
            let result = ComputeResult::Power(r);
            let body = result.to_json();
            state.append(&sid, result);
            json_response(StatusCode::OK, body)
        }
        Err(e) => error_response(&e),
    };
    with_session(resp, &sid, fresh)
}

#[derive(Deserialize)]
struct UploadQuery {
    mode: String,
    days: u32,
    per_day: u32,
}

/// Raw CSV body; `mode`, `days` and `per_day` come from the query string.
async fn randomization_csv(State(state): State<AppState>, query: Result<Query<UploadQuery>, QueryRejection>, body: Bytes) -> Response {
    let Ok(Query(q)) = query else {
        return error_response(&ApiError::new(
            400,
            "invalid_query",
            "expected query parameters mode (day|time), days and per_day",
        ));
    };
    let outcome = (|| {
        let mode: ScheduleMode = q
            .mode
            .parse()
            .map_err(|m: String| ApiError::new(400, "invalid_query", m))?;
        let text = std::str::from_utf8(&body).map_err(|_| ApiError::new(400, "csv_parse", "upload is not UTF-8 text"))?;
        let schedule = parse_probability_csv(text, mode, q.days, q.per_day)?;
        let (total_rows, preview) = preview_rows(&schedule);
        let token = state.store_upload(schedule);
        Ok::<_, ApiError>(UploadResponse {
            token,
            mode,
            total_rows,
            preview,
        })
    })();
    match outcome {
        Ok(r) => json_response(StatusCode::OK, serde_json::to_string(&r).expect("upload response serializes")),
        Err(e) => error_response(&e),
    }
}

#[derive(Serialize)]
struct HistoryBody<'a> {
    session: &'a str,
    entries: Vec<HistoryEntry>,
}

async fn history(State(state): State<AppState>, headers: HeaderMap) -> Response {
    let (sid, fresh) = state.touch(requested_session(&headers));
    let body = HistoryBody {
        session: &sid,
        entries: state.history(&sid),
    };
    let resp = json_response(StatusCode::OK, serde_json::to_string(&body).expect("history serializes"));
    with_session(resp, &sid, fresh)
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn history_export(State(state): State<AppState>, headers: HeaderMap, Query(q): Query<ExportQuery>) -> Response {
    let (sid, fresh) = state.touch(requested_session(&headers));
    let entries = state.history(&sid);
    let resp = match q.format.as_deref().unwrap_or("csv") {
        "csv" => {
            let results: Vec<ComputeResult> = entries.iter().map(|e| e.result.clone()).collect();
            let stamps: Vec<String> = entries.iter().map(|e| e.timestamp.clone()).collect();
            (
                StatusCode::OK,
                [
                    (CONTENT_TYPE, "text/csv; charset=utf-8"),
                    (axum::http::header::CONTENT_DISPOSITION, "attachment; filename=\"mrtss-history.csv\""),
                ],
                results_csv(&results, Some(&stamps)),
            )
                .into_response()
        }
        "json" => json_response(StatusCode::OK, serde_json::to_string(&entries).expect("history serializes")),
        other => error_response(&ApiError::new(
            400,
            "invalid_query",
            format!("unknown export format `{other}` (expected csv or json)"),
        )),
    };
    with_session(resp, &sid, fresh)
}

#[derive(Deserialize)]
struct PreviewQuery {
    role: TrendRole,
    days: u32,
    kind: String,
    average: f64,
    initial: Option<f64>,
    changing_point: Option<u32>,
}

fn preview_spec(q: &PreviewQuery) -> Result<TrendSpec, ApiError> {
    let need_initial = || {
        q.initial
            .ok_or_else(|| ApiError::new(400, "invalid_query", format!("{} trends need `initial`", q.kind)))
    };
    match q.kind.as_str() {
        "constant" => Ok(TrendSpec::Constant { average: q.average }),
        "linear" => Ok(TrendSpec::Linear {
            average: q.average,
            initial: need_initial()?,
        }),
        "quadratic" => Ok(TrendSpec::Quadratic {
            average: q.average,
            initial: need_initial()?,
            changing_point: q
                .changing_point
                .ok_or_else(|| ApiError::new(400, "invalid_query", "quadratic trends need `changing_point`"))?,
        }),
        other => Err(ApiError::new(
            400,
            "invalid_query",
            format!("unknown trend kind `{other}` (expected constant, linear or quadratic)"),
        )),
    }
}

async fn trend_preview_route(query: Result<Query<PreviewQuery>, QueryRejection>) -> Response {
    let outcome = query
        .map_err(|e| ApiError::new(400, "invalid_query", e.body_text()))
        .and_then(|Query(q)| {
            let spec = preview_spec(&q)?;
            trend_preview(q.role, &spec, q.days)
        });
    match outcome {
        Ok(p) => json_response(StatusCode::OK, serde_json::to_string(&p).expect("preview serializes")),
        Err(e) => error_response(&e),
    }
}

async fn simulate(body: Bytes) -> Response {
    let scenario: Scenario = match parse_json(&body) {
        Ok(s) => s,
        Err(e) => return error_response(&e),
    };
    if scenario.replications > MAX_REPLICATIONS {
        return error_response(&ApiError::new(
            400,
            "invalid_model",
            format!("replications must not exceed {MAX_REPLICATIONS}"),
        ));
    }
    let outcome = tokio::task::spawn_blocking(move || -> Result<ScenarioReport, ApiError> {
        let design = build_design(&scenario.design)?;
        let outcome = run_scenario(
            &design,
            &scenario.model,
            scenario.n,
            scenario.alpha0,
            scenario.replications,
            scenario.seed,
            FitOptions {
                small_sample_correction: scenario.small_sample_correction,
            },
        )?;
        Ok(ScenarioReport { scenario, outcome })
    })
    .await;
    match outcome {
        Ok(Ok(r)) => json_response(StatusCode::OK, serde_json::to_string(&r).expect("report serializes")),
        Ok(Err(e)) => error_response(&e),
        Err(join) => error_response(&ApiError::new(500, "internal", join.to_string())),
    }
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/v1/samplesize", post(samplesize))
        .route("/v1/power", post(power))
        .route("/v1/randomization-csv", post(randomization_csv))
        .route("/v1/history", get(history))
        .route("/v1/history/export", get(history_export))
        .route("/v1/trend/preview", get(trend_preview_route))
        .route("/v1/simulate", post(simulate))
        .with_state(state)
}

/// Address from `MRTSS_BIND`, falling back to [`DEFAULT_BIND`].
pub fn bind_address() -> Result<SocketAddr, std::net::AddrParseError> {
    std::env::var(BIND_ENV)
        .ok()
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| DEFAULT_BIND.to_string())
        .parse()
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(address = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}
