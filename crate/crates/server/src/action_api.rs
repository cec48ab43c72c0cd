//! The action-execution API.
//!
//! | method | path                          | body / reply                    |
//! |--------|-------------------------------|---------------------------------|
//! | GET    | `/alive`                      | `{"status":"ok"}`               |
//! | POST   | `/execute_action?session=ID`  | action JSON, observation JSON   |
//! | POST   | `/cancel?session=ID`          | `{"cancelled":true}`            |
//! | POST   | `/close?session=ID`           | `{"closed":true}`               |
//!
//! Actions are the tagged JSON form used in event payloads, e.g.
//! `{"kind":"shell_command","payload":{"command":"ls"}}`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use agentkernel::event::{Action, Observation};
use agentkernel::runtime::{CancelToken, Runtime, RuntimeError};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Deserialize)]
pub struct SessionQuery {
    #[serde(default = "default_session")]
    pub session: String,
}

fn default_session() -> String {
    "default".into()
}

/// Wire form of an action: the same `kind`/`payload` pair events use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionRequest {
    pub kind: String,
    pub payload: serde_json::Value,
}

impl ActionRequest {
    pub fn from_action(action: &Action) -> Self {
        let v = serde_json::to_value(action).expect("actions serialize");
        ActionRequest {
            kind: v["kind"].as_str().unwrap_or_default().to_string(),
            payload: v["payload"].clone(),
        }
    }

    pub fn into_action(self) -> Result<Action, serde_json::Error> {
        serde_json::from_value(json!({ "kind": self.kind, "payload": self.payload }))
    }
}

struct ApiState {
    runtime: Arc<dyn Runtime>,
    in_flight: Mutex<HashMap<String, CancelToken>>,
}

pub fn action_router(runtime: Arc<dyn Runtime>) -> Router {
    let state = Arc::new(ApiState {
        runtime,
        in_flight: Mutex::new(HashMap::new()),
    });
    Router::new()
        .route("/alive", get(alive))
        .route("/execute_action", post(execute))
        .route("/cancel", post(cancel))
        .route("/close", post(close))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn alive(State(s): State<Arc<ApiState>>) -> Response {
    if s.runtime.alive() {
        Json(json!({ "status": "ok" })).into_response()
    } else {
        error(StatusCode::SERVICE_UNAVAILABLE, "runtime not ready")
    }
}

async fn execute(State(s): State<Arc<ApiState>>, Query(q): Query<SessionQuery>, Json(req): Json<ActionRequest>) -> Response {
    let action = match req.into_action() {
        Ok(a) => a,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid action: {e}")),
    };
    let token = CancelToken::new();
    {
        let mut map = s.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        if map.contains_key(&q.session) {
            return error(StatusCode::CONFLICT, format!("session {} is already running an action", q.session));
        }
        map.insert(q.session.clone(), token.clone());
    }
    let state = s.clone();
    let session = q.session.clone();
    let result = tokio::task::spawn_blocking(move || state.runtime.execute(&session, &action, &token)).await;
    s.in_flight.lock().unwrap_or_else(|p| p.into_inner()).remove(&q.session);
    match result {
        Ok(Ok(obs)) => Json::<Observation>(obs).into_response(),
        Ok(Err(e @ RuntimeError::NotExecutable(_))) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => error(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn cancel(State(s): State<Arc<ApiState>>, Query(q): Query<SessionQuery>) -> Response {
    let token = s.in_flight.lock().unwrap_or_else(|p| p.into_inner()).get(&q.session).cloned();
    if let Some(t) = &token {
        t.cancel();
    }
    Json(json!({ "cancelled": token.is_some() })).into_response()
}

async fn close(State(s): State<Arc<ApiState>>, Query(q): Query<SessionQuery>) -> Response {
    let state = s.clone();
    let _ = tokio::task::spawn_blocking(move || state.runtime.close_session(&q.session)).await;
    Json(json!({ "closed": true })).into_response()
}
