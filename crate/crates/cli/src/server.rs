//! HTTP API over character sessions.
//!
//! Each session sits behind its own async mutex. A message handler takes it
//! with `try_lock`, so a second message arriving while one is in flight gets
//! 409 instead of queueing.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rolecast_core::session::{resume_session, SessionError};
use rolecast_core::state::{StateError, Violation};
use rolecast_core::{
    new_character_state, CharacterProfile, CharacterState, ConversationLog, EmotionalState, Gateway, MemoryConfig,
    PromptVariant, SensoryState, Session, SessionInit, ENGINE_VERSION, TEMPLATE_VERSION,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

type SessionHandle = Arc<Mutex<Session>>;

pub struct AppState {
    gateway: Gateway,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    journal_dir: Option<PathBuf>,
    memory: MemoryConfig,
    default_variant: PromptVariant,
}

impl AppState {
    pub fn new(gateway: Gateway, journal_dir: Option<PathBuf>, memory: MemoryConfig, default_variant: PromptVariant) -> Self {
        Self { gateway, sessions: RwLock::new(HashMap::new()), journal_dir, memory, default_variant }
    }

    /// Reloads every journal in the journal directory. Journals that fail
    /// to replay are skipped with a warning.
    pub fn resume_journals(&self) -> std::io::Result<usize> {
        let Some(dir) = &self.journal_dir else {
            return Ok(0);
        };
        if !dir.exists() {
            return Ok(0);
        }
        let mut loaded = 0;
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "jsonl") {
                continue;
            }
            match resume_session(&path) {
                Ok(session) => {
                    let id = session.id().to_owned();
                    self.sessions.write().expect("registry poisoned").insert(id, Arc::new(Mutex::new(session)));
                    loaded += 1;
                }
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "journal not resumed"),
            }
        }
        Ok(loaded)
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions
            .read()
            .expect("registry poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
    violations: Vec<Violation>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), field: None, violations: Vec::new() }
    }

    fn bad_field(field: &str, message: impl Into<String>) -> Self {
        Self { field: Some(field.to_owned()), ..Self::new(StatusCode::BAD_REQUEST, message) }
    }
}

impl From<StateError> for ApiError {
    fn from(e: StateError) -> Self {
        let violations = e.report().violations.clone();
        Self {
            status: StatusCode::BAD_REQUEST,
            message: e.to_string(),
            field: violations.first().map(|v| v.path.clone()),
            violations,
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::EmptyMessage => ApiError::bad_field("text", e.to_string()),
            SessionError::State(s) => s.into(),
            e if e.is_provider_failure() => ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()),
            e => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(field) = self.field {
            body["field"] = json!(field);
        }
        if !self.violations.is_empty() {
            body["violations"] = json!(self.violations);
        }
        (self.status, Json(body)).into_response()
    }
}

/// Parses a JSON body, reporting every failure as 400.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))
}

#[derive(Debug, Deserialize)]
struct CreateSessionBody {
    profile: Option<CharacterProfile>,
    interlocutor_name: Option<String>,
    variant: Option<String>,
    senses: Option<SensoryState>,
    emotions: Option<EmotionalState>,
    memory: Option<MemoryConfig>,
    /// Complete initial state; replaces profile, interlocutor, senses and
    /// emotions when given.
    state: Option<CharacterState>,
}

#[derive(Debug, Serialize)]
struct SessionView<'a> {
    session_id: &'a str,
    created_at: &'a str,
    variant: PromptVariant,
    seq: u64,
    state: &'a CharacterState,
    log: &'a ConversationLog,
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let body: CreateSessionBody = parse_body(&body)?;
    let variant = match &body.variant {
        None => app.default_variant,
        Some(v) => v.parse().map_err(|e| ApiError::bad_field("variant", format!("{e}")))?,
    };
    let memory = body.memory.unwrap_or(app.memory);
    if memory.threshold_tokens == 0 {
        return Err(ApiError::bad_field("memory.threshold_tokens", "must be positive"));
    }
    let state = match body.state {
        Some(state) => state,
        None => {
            let profile = body.profile.ok_or_else(|| ApiError::bad_field("profile", "is required"))?;
            let interlocutor = body.interlocutor_name.ok_or_else(|| ApiError::bad_field("interlocutor_name", "is required"))?;
            new_character_state(profile, interlocutor, body.senses, body.emotions)?
        }
    };

    let session_id = uuid::Uuid::new_v4().simple().to_string();
    let journal = app.journal_dir.as_ref().map(|d| d.join(format!("{session_id}.jsonl")));
    let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let session = Session::create(session_id.clone(), created_at, SessionInit { state, variant, memory }, journal)?;
    app.sessions.write().expect("registry poisoned").insert(session_id.clone(), Arc::new(Mutex::new(session)));
    tracing::info!(session = %session_id, %variant, "session created");
    Ok(Json(json!({ "session_id": session_id })))
}

#[derive(Debug, Deserialize)]
struct MessageBody {
    text: String,
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let handle = app.session(&id)?;
    let body: MessageBody = parse_body(&body)?;
    let mut session = handle
        .try_lock()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "another message is in flight for this session"))?;
    let outcome = session.post_message(&app.gateway, &body.text).await?;
    Ok(Json(json!({
        "reply": outcome.reply,
        "state_delta": outcome.state_delta,
        "consolidated": outcome.consolidated,
        "warning": outcome.warning,
        "seq": session.snapshot().seq,
    })))
}

async fn get_state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = app.session(&id)?;
    let session = handle.lock().await;
    let s = session.snapshot();
    let view = SessionView {
        session_id: &s.session_id,
        created_at: &s.created_at,
        variant: s.variant,
        seq: s.seq,
        state: &s.state,
        log: &s.log,
    };
    Ok(Json(view).into_response())
}

async fn get_prompt(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let handle = app.session(&id)?;
    let session = handle.lock().await;
    Ok(Json(json!({ "prompt": session.snapshot().last_prompt })))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match app.sessions.write().expect("registry poisoned").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))),
    }
}

async fn meta() -> Json<serde_json::Value> {
    Json(json!({
        "template_version": TEMPLATE_VERSION,
        "engine_version": ENGINE_VERSION,
        "variants": PromptVariant::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>(),
    }))
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

/// CORS for the configured origins; `"*"` allows any origin.
pub fn cors_layer(origins: &[String]) -> CorsLayer {
    let base = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    if origins.iter().any(|o| o == "*") {
        return base.allow_origin(Any);
    }
    let parsed: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    base.allow_origin(AllowOrigin::list(parsed))
}

pub fn router(app: Arc<AppState>, cors: CorsLayer) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/state", get(get_state))
        .route("/v1/sessions/{id}/prompt", get(get_prompt))
        .route("/v1/sessions/{id}", axum::routing::delete(delete_session))
        .route("/v1/meta", get(meta))
        .route("/healthz", get(healthz))
        .layer(cors)
        .with_state(app)
}
