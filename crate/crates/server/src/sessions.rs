//! Interactive sessions over HTTP and WebSocket.
//!
//! ```text
//! POST /sessions                    {"task": "...", "agent"?: "...", "limits"?: {...}} -> {"id": "s1"}
//! GET  /sessions                    -> [SessionInfo]
//! GET  /sessions/:id                -> SessionInfo
//! GET  /sessions/:id/events?after=N -> [Event]   (JSON)
//! GET  /sessions/:id/events         WebSocket upgrade
//! POST /sessions/:id/messages       {"content": "...", "interrupt": bool} -> {"id": N}
//! POST /sessions/:id/abort
//! ```
//!
//! A WebSocket client receives every event of the session from id 1
//! onwards, then live events, one text frame per event in the same encoding
//! as a trajectory line. Control frames are distinguished by a `type` key:
//! `{"type":"ack","id":N}` once a submitted message has been appended,
//! `{"type":"error","message":"..."}` when one is rejected, and
//! `{"type":"closed"}` after the last event of a finished session. Clients
//! send `{"type":"user_message","content":"...","interrupt":false}`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use agentkernel::controller::{final_message, Controller, ControllerError, SessionHandle, SessionSpec};
use agentkernel::event::{Event, EventStream, SessionLimits};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SessionInfo {
    pub id: String,
    pub agent: String,
    pub task: String,
    pub status: SessionStatus,
    pub events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Finished,
    AwaitingUser,
    MaxIterations,
    MaxCost,
    UserAbort,
    RuntimeError,
}

struct Outcome {
    status: SessionStatus,
    final_message: Option<String>,
    error: Option<String>,
}

struct Entry {
    agent: String,
    task: String,
    stream: EventStream,
    handle: SessionHandle,
    outcome: Arc<Mutex<Option<Outcome>>>,
}

impl Entry {
    fn info(&self, id: &str) -> SessionInfo {
        let outcome = self.outcome.lock().unwrap_or_else(|p| p.into_inner());
        SessionInfo {
            id: id.to_string(),
            agent: self.agent.clone(),
            task: self.task.clone(),
            status: outcome.as_ref().map_or(SessionStatus::Running, |o| o.status),
            events: self.stream.len(),
            final_message: outcome.as_ref().and_then(|o| o.final_message.clone()),
            error: outcome.as_ref().and_then(|o| o.error.clone()),
        }
    }
}

/// Owns the running sessions of one server.
pub struct SessionManager {
    controller: Controller,
    default_agent: String,
    default_limits: SessionLimits,
    sessions: Mutex<BTreeMap<u64, Arc<Entry>>>,
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub task: String,
    pub agent: Option<String>,
    pub limits: Option<SessionLimits>,
}

#[derive(Debug, Deserialize)]
pub struct UserMessage {
    pub content: String,
    #[serde(default)]
    pub interrupt: bool,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientFrame {
    UserMessage(UserMessage),
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub after: u64,
}

impl SessionManager {
    /// `controller` should be interactive so sessions wait for the user
    /// instead of ending when the agent asks a question.
    pub fn new(controller: Controller, default_agent: impl Into<String>, default_limits: SessionLimits) -> Self {
        SessionManager {
            controller,
            default_agent: default_agent.into(),
            default_limits,
            sessions: Mutex::new(BTreeMap::new()),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<u64, Arc<Entry>>> {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn entry(&self, id: &str) -> Option<Arc<Entry>> {
        let n: u64 = id.strip_prefix('s')?.parse().ok()?;
        self.lock().get(&n).cloned()
    }

    /// Starts a session on its own thread and returns its id.
    pub fn create(&self, req: CreateSession) -> Result<String, ControllerError> {
        let agent = req.agent.unwrap_or_else(|| self.default_agent.clone());
        if self.controller.registry().get(&agent).is_none() {
            return Err(ControllerError::UnknownAgent(agent));
        }
        let limits = req.limits.unwrap_or(self.default_limits);
        limits.validate()?;

        let mut sessions = self.lock();
        let n = sessions.keys().next_back().map_or(1, |k| k + 1);
        let id = format!("s{n}");
        let spec = SessionSpec::new(&id, req.task.clone(), agent.clone(), limits);
        let entry = Arc::new(Entry {
            agent,
            task: req.task,
            stream: spec.stream.clone(),
            handle: SessionHandle::new(&id),
            outcome: Arc::new(Mutex::new(None)),
        });
        sessions.insert(n, entry.clone());
        drop(sessions);

        let controller = self.controller.clone();
        std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || {
                let result = controller.run_session(spec, &entry.handle);
                let outcome = match result {
                    Ok(state) => Outcome {
                        status: status_of(state.termination()),
                        final_message: final_message(&state),
                        error: None,
                    },
                    Err(e) => Outcome {
                        status: SessionStatus::RuntimeError,
                        final_message: None,
                        error: Some(e.to_string()),
                    },
                };
                *entry.outcome.lock().unwrap_or_else(|p| p.into_inner()) = Some(outcome);
            })
            .map_err(|e| ControllerError::SessionClosed(format!("{id}: {e}")))?;
        Ok(id)
    }

    pub fn list(&self) -> Vec<SessionInfo> {
        self.lock().iter().map(|(n, e)| e.info(&format!("s{n}"))).collect()
    }

    pub fn info(&self, id: &str) -> Option<SessionInfo> {
        self.entry(id).map(|e| e.info(id))
    }

    pub fn abort_all(&self) {
        for entry in self.lock().values() {
            entry.handle.abort();
        }
    }
}

fn status_of(t: Option<agentkernel::event::TerminationReason>) -> SessionStatus {
    use agentkernel::event::TerminationReason as T;
    match t {
        None => SessionStatus::Running,
        Some(T::Finished) => SessionStatus::Finished,
        Some(T::AwaitingUser) => SessionStatus::AwaitingUser,
        Some(T::MaxIterations) => SessionStatus::MaxIterations,
        Some(T::MaxCost) => SessionStatus::MaxCost,
        Some(T::UserAbort) => SessionStatus::UserAbort,
        Some(T::RuntimeError) => SessionStatus::RuntimeError,
    }
}

pub fn session_router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/:id", get(info))
        .route("/sessions/:id/events", get(events))
        .route("/sessions/:id/messages", post(message))
        .route("/sessions/:id/abort", post(abort))
        .with_state(manager)
}

type Shared = State<Arc<SessionManager>>;

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("no session {id}"))
}

async fn create(State(m): Shared, Json(req): Json<CreateSession>) -> Response {
    match m.create(req) {
        Ok(id) => (StatusCode::CREATED, Json(json!({ "id": id }))).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn list(State(m): Shared) -> Json<Vec<SessionInfo>> {
    Json(m.list())
}

async fn info(State(m): Shared, Path(id): Path<String>) -> Response {
    match m.info(&id) {
        Some(i) => Json(i).into_response(),
        None => not_found(&id),
    }
}

async fn events(State(m): Shared, Path(id): Path<String>, Query(q): Query<EventsQuery>, ws: Option<WebSocketUpgrade>) -> Response {
    let Some(entry) = m.entry(&id) else {
        return not_found(&id);
    };
    match ws {
        Some(ws) => ws.on_upgrade(move |socket| feed(socket, entry)),
        None => {
            let events: Vec<Event> = entry
                .stream
                .snapshot()
                .iter()
                .filter(|e| e.id.0 > q.after)
                .map(|e| Event::clone(e))
                .collect();
            Json(events).into_response()
        }
    }
}

async fn message(State(m): Shared, Path(id): Path<String>, Json(msg): Json<UserMessage>) -> Response {
    let Some(entry) = m.entry(&id) else {
        return not_found(&id);
    };
    let result = tokio::task::spawn_blocking(move || entry.handle.inject_user_message(msg.content, msg.interrupt)).await;
    match result {
        Ok(Ok(event_id)) => Json(json!({ "id": event_id.0 })).into_response(),
        Ok(Err(e)) => error(StatusCode::CONFLICT, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn abort(State(m): Shared, Path(id): Path<String>) -> Response {
    match m.entry(&id) {
        Some(entry) => {
            entry.handle.abort();
            Json(json!({ "aborted": true })).into_response()
        }
        None => not_found(&id),
    }
}

const FEED_POLL: Duration = Duration::from_millis(100);

async fn feed(mut socket: WebSocket, entry: Arc<Entry>) {
    let (tx, mut rx) = mpsc::channel::<String>(256);

    let subscription = entry.stream.subscribe();
    let event_tx = tx.clone();
    tokio::task::spawn_blocking(move || loop {
        match subscription.recv_timeout(FEED_POLL) {
            Ok(Some(event)) => {
                if event_tx.blocking_send(event.encode()).is_err() {
                    break;
                }
            }
            Ok(None) if event_tx.is_closed() => break,
            Ok(None) => {}
            Err(()) => {
                let _ = event_tx.blocking_send(json!({ "type": "closed" }).to_string());
                break;
            }
        }
    });

    loop {
        tokio::select! {
            out = rx.recv() => {
                let Some(text) = out else { break };
                if socket.send(Message::Text(text)).await.is_err() {
                    break;
                }
            }
            incoming = socket.recv() => {
                match incoming {
                    Some(Ok(Message::Text(text))) => submit(&entry, &text, &tx),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => {}
                }
            }
        }
    }
}

fn submit(entry: &Entry, text: &str, tx: &mpsc::Sender<String>) {
    let reply = |frame: serde_json::Value| {
        let _ = tx.try_send(frame.to_string());
    };
    let msg = match serde_json::from_str::<ClientFrame>(text) {
        Ok(ClientFrame::UserMessage(m)) => m,
        Err(e) => return reply(json!({ "type": "error", "message": format!("invalid frame: {e}") })),
    };
    match entry.handle.submit(msg.content, msg.interrupt) {
        Ok(pending) => {
            let tx = tx.clone();
            tokio::task::spawn_blocking(move || {
                let frame = match pending.wait() {
                    Ok(id) => json!({ "type": "ack", "id": id.0 }),
                    Err(e) => json!({ "type": "error", "message": e.to_string() }),
                };
                let _ = tx.blocking_send(frame.to_string());
            });
        }
        Err(e) => reply(json!({ "type": "error", "message": e.to_string() })),
    }
}
