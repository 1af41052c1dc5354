//! HTTP+JSON front end for live sessions.
//!
//! Routes:
//!
//! | method | path | body |
//! |---|---|---|
//! | `POST` | `/api/sessions` | optional config overrides |
//! | `GET` | `/api/sessions/{id}` | |
//! | `POST` | `/api/sessions/{id}/initial` | `{"selection": "A"}` |
//! | `POST` | `/api/sessions/{id}/final` | `{"final": "B"}` |
//! | `GET` | `/api/sessions/{id}/trace` | |
//! | `GET` | `/healthz` | |
//!
//! Validation problems answer 422 with `{"error", "fields": [{"field", "message"}]}`,
//! state-machine violations 409, unknown sessions 404.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, FieldError, SessionConfig};
use crate::session::{LiveSession, SessionError};
use crate::Choice;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    base: SessionConfig,
    transcript_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<LiveSession>>>>,
}

impl AppState {
    /// `base` supplies every setting a create request leaves out.
    pub fn new(base: SessionConfig, transcript_dir: Option<PathBuf>) -> AppState {
        AppState { inner: Arc::new(Inner { base, transcript_dir, sessions: RwLock::new(HashMap::new()) }) }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>, ApiError> {
        self.inner.sessions.read().get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("no session {id:?}")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/initial", post(post_initial))
        .route("/api/sessions/{id}/final", post(post_final))
        .route("/api/sessions/{id}/trace", get(get_trace))
        .with_state(state)
}

#[derive(Debug)]
pub enum ApiError {
    Validation(String, Vec<FieldError>),
    Conflict(String),
    NotFound(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Validation(error, fields) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({
                    "error": error,
                    "fields": fields.iter().map(|f| json!({"field": f.field, "message": f.message})).collect::<Vec<_>>(),
                }),
            ),
            ApiError::Conflict(e) => (StatusCode::CONFLICT, json!({ "error": e })),
            ApiError::NotFound(e) => (StatusCode::NOT_FOUND, json!({ "error": e })),
            ApiError::Internal(e) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e })),
        };
        (status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> ApiError {
        match e {
            SessionError::WrongState { .. } => ApiError::Conflict(e.to_string()),
            SessionError::Config(ConfigError::Invalid(fields)) => ApiError::Validation("invalid config".into(), fields),
            SessionError::Config(other) => ApiError::Validation(other.to_string(), Vec::new()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

fn field_error(field: &str, message: impl Into<String>) -> ApiError {
    ApiError::Validation(format!("invalid {field}"), vec![FieldError { field: field.into(), message: message.into() }])
}

fn parse_object(body: &Bytes) -> Result<serde_json::Map<String, Value>, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(serde_json::Map::new());
    }
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(field_error("body", "expected a JSON object")),
        Err(e) => Err(field_error("body", e.to_string())),
    }
}

/// Overlays the request's top-level keys on the base config. An optional
/// `"config"` wrapper object is accepted too.
fn merged_config(base: &SessionConfig, body: &Bytes) -> Result<SessionConfig, ApiError> {
    let mut overrides = parse_object(body)?;
    if let Some(Value::Object(inner)) = overrides.remove("config") {
        overrides.extend(inner);
    }
    let mut value = serde_json::to_value(base).map_err(|e| ApiError::Internal(e.to_string()))?;
    let target = value.as_object_mut().expect("config is an object");
    for (k, v) in overrides {
        if !target.contains_key(&k) {
            return Err(field_error(&k, "unknown field"));
        }
        target.insert(k, v);
    }
    serde_json::from_value(value).map_err(|e| {
        ApiError::Validation(
            "invalid config".into(),
            vec![FieldError { field: "config".into(), message: e.to_string() }],
        )
    })
}

fn selection(body: &Bytes, field: &str) -> Result<Choice, ApiError> {
    let map = parse_object(body)?;
    match map.get(field) {
        Some(Value::String(s)) => s.parse::<Choice>().map_err(|e| field_error(field, e.to_string())),
        Some(other) => Err(field_error(field, format!("expected \"A\" or \"B\", got {other}"))),
        None => Err(field_error(field, "missing")),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

fn ok<T: Serialize>(status: StatusCode, value: T) -> Response {
    (status, Json(value)).into_response()
}

async fn healthz() -> Response {
    ok(StatusCode::OK, json!({ "status": "ok" }))
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let config = merged_config(&state.inner.base, &body)?;
    let inner = state.inner.clone();
    let session = blocking(move || {
        let id = uuid::Uuid::new_v4().to_string();
        Ok(LiveSession::create(config, id, inner.transcript_dir.as_deref())?)
    })
    .await?;
    let view = session.view();
    tracing::info!(id = %view.id, "session created");
    state.inner.sessions.write().insert(view.id.clone(), Arc::new(Mutex::new(session)));
    Ok(ok(StatusCode::CREATED, view))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let view = session.lock().view();
    Ok(ok(StatusCode::OK, view))
}

async fn post_initial(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let choice = selection(&body, "selection")?;
    let out = blocking(move || Ok(session.lock().initial(choice)?)).await?;
    Ok(ok(StatusCode::OK, out))
}

async fn post_final(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let choice = selection(&body, "final")?;
    // Refits can take a while; they hold only this session's lock.
    let out = blocking(move || Ok(session.lock().final_decision(choice)?)).await?;
    Ok(ok(StatusCode::OK, out))
}

async fn get_trace(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let records = session.lock().get_trace().to_vec();
    Ok(ok(StatusCode::OK, json!({ "id": id, "records": records })))
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
