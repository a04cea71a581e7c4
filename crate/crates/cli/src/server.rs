//! HTTP and event-stream surface over the co-creation engine.
//!
//! Engine calls may block on a remote model for minutes, so they run on the
//! blocking pool. Each session has one writer lock; readers use a published
//! copy that is refreshed after every operation.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::Context;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use cocreate_core::backend::{AgentBackend, BackendSpec};
use cocreate_core::catalog::{Catalog, OfferingRef};
use cocreate_core::clock::{SharedClock, SystemClock};
use cocreate_core::dialogue::{
    CoCreationEngine, DialogueSession, EngineConfig, EngineError, EventKind, Selection, SessionEvent, SessionOptions,
    TemporalSpec, Trajectory,
};
use cocreate_core::gateway::{OrderInventory, SkillPolicy, ToolGateway};
use cocreate_core::memory::MemoryStore;
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::config::ServerConfig;

pub const API_SCHEMA_VERSION: &str = "1.0";

struct SessionSlot {
    writer: Mutex<DialogueSession>,
    /// Copy for readers, replaced after each operation.
    view: Mutex<DialogueSession>,
    backend: Box<dyn AgentBackend>,
    events: broadcast::Sender<SessionEvent>,
}

impl SessionSlot {
    /// Publishes the writer's state and broadcasts events past `from`.
    fn publish(&self, s: &DialogueSession, from: usize) {
        let mut view = self.view.lock().expect("view lock");
        *view = s.clone();
        for e in &s.events[from.min(s.events.len())..] {
            let _ = self.events.send(e.clone());
        }
    }
}

pub struct AppState {
    engine: CoCreationEngine,
    catalog: Arc<Catalog>,
    default_backend: BackendSpec,
    idle_timeout: Duration,
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
}

impl AppState {
    pub fn new(
        catalog: Arc<Catalog>,
        engine: CoCreationEngine,
        default_backend: BackendSpec,
        idle_timeout: Duration,
    ) -> Arc<Self> {
        Arc::new(Self { engine, catalog, default_backend, idle_timeout, sessions: Mutex::new(HashMap::new()) })
    }

    /// Loads the catalog and opens the stores named by `config`.
    pub fn from_config(config: &ServerConfig) -> anyhow::Result<Arc<Self>> {
        let catalog = Arc::new(match &config.catalog_path {
            Some(p) => Catalog::from_path(p).with_context(|| format!("catalog {}", p.display()))?,
            None => Catalog::reference(),
        });
        let clock: SharedClock = SystemClock::shared();
        let (inventory, memory) = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).with_context(|| format!("data dir {}", dir.display()))?;
                let inv = OrderInventory::open(dir.join("orders.jsonl")).context("order inventory")?;
                let mem = MemoryStore::open(dir.join("cases"), clock.clone()).context("case store")?;
                (inv, mem)
            }
            None => (OrderInventory::in_memory(), MemoryStore::in_memory(clock.clone())),
        };
        let gateway = Arc::new(ToolGateway::new(catalog.clone(), SkillPolicy::strict(), Arc::new(inventory), clock));
        let engine_config = EngineConfig { turn_timeout: config.per_turn_timeout, ..EngineConfig::default() };
        let engine = CoCreationEngine::new(gateway, Arc::new(memory), engine_config);
        Ok(Self::new(catalog, engine, config.default_backend.clone(), config.per_turn_timeout))
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`")))
    }

    /// Aborts every session idle for longer than the timeout. Sessions busy
    /// in an operation are skipped; the backend call has its own timeout.
    pub fn sweep_idle(&self) -> usize {
        let slots: Vec<Arc<SessionSlot>> = self.sessions.lock().expect("sessions lock").values().cloned().collect();
        let mut aborted = 0;
        for slot in slots {
            let Ok(mut s) = slot.writer.try_lock() else { continue };
            let before = s.events.len();
            if self.engine.abort_if_idle(&mut s, self.idle_timeout) {
                aborted += 1;
                slot.publish(&s, before);
            }
        }
        aborted
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

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use EngineError::*;
        let status = match &e {
            WrongStage { .. } | TerminalStage(_) | NotConfirmed(_) | UnsupportedTrajectory(_) | Aborted { .. } => {
                StatusCode::CONFLICT
            }
            EmptyIntent | InvalidSessionId(_) | InvalidSelection(_) | InvalidDate(_) => StatusCode::BAD_REQUEST,
            NoGroundedLookup | MissingParameter(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Memory(cocreate_core::memory::MemoryError::DuplicateCase(_)) => StatusCode::CONFLICT,
            Gateway(_) | Memory(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "schemaVersion": API_SCHEMA_VERSION, "error": self.message }))).into_response()
    }
}

fn reply(status: StatusCode, mut body: Value) -> Response {
    body["schemaVersion"] = json!(API_SCHEMA_VERSION);
    (status, Json(body)).into_response()
}

fn joined<T>(r: Result<T, tokio::task::JoinError>) -> Result<T, ApiError> {
    r.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CreateSession {
    intent_text: String,
    /// `oracle`, `scripted:<profile>` or `remote:<url>,<model>`.
    #[serde(default)]
    backend: Option<String>,
    #[serde(default)]
    session_id: Option<String>,
    #[serde(default)]
    default_slice_profile: Option<String>,
    #[serde(default)]
    trajectory: Option<Trajectory>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "action", rename_all = "camelCase", rename_all_fields = "camelCase", deny_unknown_fields)]
enum Message {
    Text { text: String },
    Select {
        #[serde(default)]
        index: Option<usize>,
        #[serde(default)]
        bundle: Option<Vec<OfferingRef>>,
    },
    Temporal { start_date: NaiveDate, duration_days: u32 },
    Confirm,
    Abort {
        #[serde(default)]
        reason: Option<String>,
    },
}

async fn create_session(State(st): State<Arc<AppState>>, body: Result<Json<CreateSession>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let spec = match &req.backend {
        Some(b) => BackendSpec::parse(b).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?,
        None => st.default_backend.clone(),
    };
    let state = st.clone();
    joined(
        tokio::task::spawn_blocking(move || {
            let backend = spec.build(state.catalog.clone(), None).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
            let opts = SessionOptions {
                trajectory: req.trajectory.unwrap_or_default(),
                session_id: req.session_id,
                default_slice_profile: req.default_slice_profile,
            };
            let mut sessions = state.sessions.lock().expect("sessions lock");
            if let Some(id) = &opts.session_id {
                if sessions.contains_key(id) {
                    return Err(ApiError::new(StatusCode::CONFLICT, format!("session `{id}` exists")));
                }
            }
            let s = state.engine.open_session(&req.intent_text, opts)?;
            let id = s.session_id.clone();
            let (events, _) = broadcast::channel(256);
            let body = json!({ "sessionId": id, "stage": s.stage, "backend": backend.name(), "session": s });
            let slot = SessionSlot { view: Mutex::new(s.clone()), writer: Mutex::new(s), backend, events };
            sessions.insert(id, Arc::new(slot));
            Ok(reply(StatusCode::CREATED, body))
        })
        .await,
    )?
}

async fn post_message(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<Message>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(msg) = body?;
    let slot = st.slot(&id)?;
    let state = st.clone();
    joined(
        tokio::task::spawn_blocking(move || {
            let engine = &state.engine;
            let mut s = slot.writer.lock().expect("session lock");
            let before = s.events.len();
            let backend = slot.backend.as_ref();
            let result: Result<Option<String>, EngineError> = match msg {
                Message::Text { text } => engine.user_message(&mut s, backend, &text).map(Some),
                Message::Select { index: Some(i), bundle: None } => engine.select_combination(&mut s, Selection::Index(i)).map(|_| None),
                Message::Select { index: None, bundle: Some(b) } => engine.select_combination(&mut s, Selection::Bundle(b)).map(|_| None),
                Message::Select { .. } => Err(EngineError::InvalidSelection("give exactly one of index or bundle".into())),
                Message::Temporal { start_date, duration_days } => {
                    engine.set_temporal(&mut s, TemporalSpec { start_date, duration_days }).map(|_| None)
                }
                Message::Confirm => engine.confirm(&mut s).map(|_| None),
                Message::Abort { reason } => engine.abort(&mut s, reason.as_deref().unwrap_or("user abort")).map(|_| None),
            };
            slot.publish(&s, before);
            match result {
                Ok(text) => Ok(reply(StatusCode::OK, json!({ "reply": text, "stage": s.stage, "session": *s }))),
                // The request was handled; the backend ended the session.
                Err(e @ EngineError::Aborted { .. }) if before < s.events.len() => {
                    Ok(reply(StatusCode::OK, json!({ "reply": null, "error": e.to_string(), "stage": s.stage, "session": *s })))
                }
                Err(e) => Err(e.into()),
            }
        })
        .await,
    )?
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = st.slot(&id)?;
    let view = slot.view.lock().expect("view lock").clone();
    Ok(reply(StatusCode::OK, json!({ "stage": view.stage, "session": view })))
}

async fn delete_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = st.slot(&id)?;
    let state = st.clone();
    joined(
        tokio::task::spawn_blocking(move || {
            let mut s = slot.writer.lock().expect("session lock");
            let before = s.events.len();
            state.engine.abort(&mut s, "deleted by user")?;
            slot.publish(&s, before);
            Ok(reply(StatusCode::OK, json!({ "stage": s.stage, "session": *s })))
        })
        .await,
    )?
}

fn event_name(e: &SessionEvent) -> &'static str {
    match e.kind {
        EventKind::StageChanged { .. } => "StageChanged",
        EventKind::ProposalAdded { .. } => "ProposalAdded",
        EventKind::HallucinationFinding { .. } => "HallucinationFinding",
        EventKind::QuoteUpdated { .. } => "QuoteUpdated",
        EventKind::DraftReady { .. } => "DraftReady",
        EventKind::OrderPlaced { .. } => "OrderPlaced",
        EventKind::Aborted { .. } => "Aborted",
    }
}

fn ends_stream(e: &SessionEvent) -> bool {
    matches!(e.kind, EventKind::OrderPlaced { .. } | EventKind::Aborted { .. })
}

/// Past events, then live ones; the stream ends after OrderPlaced or Aborted.
fn event_stream(slot: &SessionSlot) -> impl Stream<Item = SessionEvent> + Send + 'static {
    let view = slot.view.lock().expect("view lock");
    let rx = slot.events.subscribe();
    let past = view.events.clone();
    let done = past.iter().any(ends_stream);
    let last = past.last().map_or(0, |e| e.seq);
    drop(view);
    let live = BroadcastStream::new(rx).filter_map(move |r| async move { r.ok().filter(|e| e.seq > last) });
    let all = if done { stream::iter(past).boxed() } else { stream::iter(past).chain(live).boxed() };
    stream::unfold((all, false), |(mut inner, done)| async move {
        if done {
            return None;
        }
        let e = inner.next().await?;
        let end = ends_stream(&e);
        Some((e, (inner, end)))
    })
}

async fn session_events(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = st.slot(&id)?;
    let stream = event_stream(&slot).map(|e| {
        let mut data = serde_json::to_value(&e).expect("event serializes");
        data["schemaVersion"] = json!(API_SCHEMA_VERSION);
        Ok::<_, Infallible>(Event::default().event(event_name(&e)).id(e.seq.to_string()).data(data.to_string()))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response())
}

async fn list_offerings(State(st): State<Arc<AppState>>) -> Response {
    reply(StatusCode::OK, json!({ "catalogVersion": st.catalog.version(), "offerings": st.catalog.offerings() }))
}

async fn list_orders(State(st): State<Arc<AppState>>) -> Response {
    reply(StatusCode::OK, json!({ "orders": st.engine.gateway().inventory().records() }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

pub fn router(state: Arc<AppState>, cors_allow_list: &[String]) -> Router {
    let app = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/events", get(session_events))
        .route("/catalog/offerings", get(list_offerings))
        .route("/orders", get(list_orders))
        .fallback(not_found)
        .with_state(state);
    let origins: Vec<HeaderValue> = cors_allow_list.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    if origins.is_empty() {
        return app;
    }
    app.layer(
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(origins))
            .allow_methods([Method::GET, Method::POST, Method::DELETE])
            .allow_headers([header::CONTENT_TYPE]),
    )
}

/// Periodically aborts idle sessions.
pub fn spawn_watchdog(state: Arc<AppState>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let st = state.clone();
            match tokio::task::spawn_blocking(move || st.sweep_idle()).await {
                Ok(n) if n > 0 => tracing::info!(aborted = n, "idle sessions aborted"),
                Ok(_) => {}
                Err(e) => tracing::warn!(error = %e, "watchdog sweep failed"),
            }
        }
    })
}

pub async fn serve(config: ServerConfig) -> anyhow::Result<()> {
    let state = tokio::task::spawn_blocking({
        let config = config.clone();
        move || AppState::from_config(&config)
    })
    .await??;
    let every = (config.per_turn_timeout / 4).clamp(Duration::from_secs(1), Duration::from_secs(30));
    let watchdog = spawn_watchdog(state.clone(), every);
    let listener = tokio::net::TcpListener::bind(config.listen_address)
        .await
        .with_context(|| format!("cannot listen on {}", config.listen_address))?;
    tracing::info!(address = %listener.local_addr()?, backend = ?config.default_backend, "serving");
    axum::serve(listener, router(state, &config.cors_allow_list))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    watchdog.abort();
    Ok(())
}
