use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use agentkernel::event::{Action, Observation};
use agentkernel::runtime::{CancelToken, Runtime, RuntimeError};
use reqwest::blocking::Client;
use reqwest::StatusCode;

use crate::action_api::ActionRequest;

const CANCEL_POLL: Duration = Duration::from_millis(25);

/// A [`Runtime`] backed by an action API at `base_url`.
///
/// Requests carry no timeout of their own: the sandbox enforces command
/// timeouts and a cancelled action is interrupted server-side through
/// `/cancel`.
#[derive(Debug, Clone)]
pub struct RemoteRuntime {
    base_url: String,
    client: Client,
}

impl RemoteRuntime {
    pub fn new(base_url: impl Into<String>) -> Result<Self, RuntimeError> {
        let client = Client::builder()
            .timeout(None)
            .build()
            .map_err(|e| RuntimeError::Unavailable(e.to_string()))?;
        Ok(RemoteRuntime {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client,
        })
    }

    fn url(&self, path: &str, session: &str) -> String {
        format!("{}/{path}?session={}", self.base_url, encode(session))
    }
}

fn encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn unavailable(e: impl std::fmt::Display) -> RuntimeError {
    RuntimeError::Unavailable(e.to_string())
}

impl Runtime for RemoteRuntime {
    fn execute(&self, session: &str, action: &Action, cancel: &CancelToken) -> Result<Observation, RuntimeError> {
        let (tx, rx) = mpsc::channel();
        let request = self.client.post(self.url("execute_action", session)).json(&ActionRequest::from_action(action));
        thread::spawn(move || {
            let _ = tx.send(request.send());
        });

        let mut cancel_sent = false;
        let response = loop {
            match rx.recv_timeout(CANCEL_POLL) {
                Ok(r) => break r.map_err(unavailable)?,
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    if !cancel_sent && cancel.is_cancelled() {
                        cancel_sent = true;
                        if let Err(e) = self.client.post(self.url("cancel", session)).send() {
                            tracing::warn!(error = %e, "cancel request failed");
                        }
                    }
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => return Err(unavailable("request thread exited")),
            }
        };

        match response.status() {
            StatusCode::OK => response.json::<Observation>().map_err(unavailable),
            StatusCode::BAD_REQUEST => Err(RuntimeError::NotExecutable(action.kind())),
            status => {
                let body = response.text().unwrap_or_default();
                Err(unavailable(format!("{status}: {body}")))
            }
        }
    }

    fn alive(&self) -> bool {
        self.client
            .get(format!("{}/alive", self.base_url))
            .timeout(Duration::from_secs(5))
            .send()
            .map(|r| r.status().is_success())
            .unwrap_or(false)
    }

    fn close_session(&self, session: &str) {
        if let Err(e) = self.client.post(self.url("close", session)).send() {
            tracing::warn!(session, error = %e, "close request failed");
        }
    }
}
