use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use agentkernel::agents::AgentRegistry;
use agentkernel::controller::{Controller, ControllerOptions, SessionHandle, SessionSpec};
use agentkernel::event::{Action, ErrorCategory, Event, Observation, SessionLimits, TerminationReason};
use agentkernel::llm::Gateway;
use agentkernel::runtime::{CancelToken, LocalRuntime, Runtime, RuntimeConfig, RuntimeError};
use agentkernel_server::action_api::action_router;
use agentkernel_server::sessions::{session_router, SessionManager};
use agentkernel_server::RemoteRuntime;
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

fn local_runtime() -> (tempfile::TempDir, Arc<dyn Runtime>) {
    let dir = tempfile::tempdir().unwrap();
    let rt = LocalRuntime::new(RuntimeConfig::new(dir.path())).unwrap();
    (dir, Arc::new(rt))
}

/// Serves `router` on an ephemeral port from a background runtime.
fn spawn(router: axum::Router) -> SocketAddr {
    let std_listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    std_listener.set_nonblocking(true).unwrap();
    let addr = std_listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).unwrap();
            agentkernel_server::serve(listener, router, std::future::pending()).await.unwrap();
        });
    });
    addr
}

fn session_server(responses: &[&str]) -> (tempfile::TempDir, SocketAddr) {
    let (dir, rt) = local_runtime();
    let controller = Controller::new(
        Arc::new(AgentRegistry::builtin()),
        rt,
        Gateway::scripted(responses.iter().map(|s| s.to_string()).collect::<Vec<_>>()),
    )
    .with_options(ControllerOptions { interactive: true });
    let manager = Arc::new(SessionManager::new(controller, "codeact@1", SessionLimits::default()));
    (dir, spawn(session_router(manager)))
}

#[test]
fn remote_runtime_executes_through_the_api() {
    let (_d, local) = local_runtime();
    let addr = spawn(action_router(local));
    let remote = RemoteRuntime::new(format!("http://{addr}")).unwrap();
    assert!(remote.alive());

    let token = CancelToken::new();
    let obs = remote.execute("a", &Action::shell("printf remote"), &token).unwrap();
    let Observation::ShellResult(r) = obs else { panic!("{obs:?}") };
    assert_eq!((r.output.as_str(), r.exit_code), ("remote", 0));

    remote.execute("a", &Action::shell("mkdir sub && cd sub"), &token).unwrap();
    let Observation::ShellResult(r) = remote.execute("a", &Action::shell("true"), &token).unwrap() else { panic!() };
    assert_eq!(r.cwd, "/workspace/sub");

    assert!(matches!(
        remote.execute("a", &Action::finish(""), &token),
        Err(RuntimeError::NotExecutable(_))
    ));
    remote.close_session("a");
}

#[test]
fn remote_cancel_interrupts_command() {
    let (_d, local) = local_runtime();
    let addr = spawn(action_router(local));
    let remote = RemoteRuntime::new(format!("http://{addr}")).unwrap();
    let token = CancelToken::new();
    let t = token.clone();
    std::thread::spawn(move || {
        std::thread::sleep(Duration::from_millis(300));
        t.cancel();
    });
    let start = Instant::now();
    let obs = remote.execute("c", &Action::shell("sleep 30"), &token).unwrap();
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(obs.as_error().map(|e| e.category), Some(ErrorCategory::Cancelled));
}

#[test]
fn unreachable_server_is_unavailable() {
    let remote = RemoteRuntime::new("http://127.0.0.1:9").unwrap();
    assert!(!remote.alive());
    assert!(matches!(
        remote.execute("x", &Action::shell("true"), &CancelToken::new()),
        Err(RuntimeError::Unavailable(_))
    ));
}

#[test]
fn controller_runs_on_remote_runtime() {
    let (_d, local) = local_runtime();
    let addr = spawn(action_router(local));
    let remote: Arc<dyn Runtime> = Arc::new(RemoteRuntime::new(format!("http://{addr}")).unwrap());
    let c = Controller::new(
        Arc::new(AgentRegistry::builtin()),
        remote,
        Gateway::scripted(["<execute_bash>echo 42 > a.txt && cat a.txt</execute_bash>", "<finish>42</finish>"]),
    );
    let s = c
        .run_session(SessionSpec::new("r", "write 42", "codeact@1", SessionLimits::default()), &SessionHandle::new("r"))
        .unwrap();
    assert_eq!(s.termination(), Some(TerminationReason::Finished));
    assert!(s.events().iter().any(|e| matches!(e.observation(), Some(Observation::ShellResult(r)) if r.output.trim() == "42")));
}

async fn post(client: &reqwest::Client, url: String, body: Value) -> Value {
    client.post(url).json(&body).send().await.unwrap().json().await.unwrap()
}

async fn wait_status(client: &reqwest::Client, base: &str, id: &str) -> Value {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let info: Value = client.get(format!("{base}/sessions/{id}")).send().await.unwrap().json().await.unwrap();
        if info["status"] != "running" || Instant::now() > deadline {
            return info;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn late_websocket_client_sees_contiguous_ids() {
    let (_d, addr) = session_server(&[
        "<execute_bash>echo one</execute_bash>",
        "<execute_bash>sleep 0.3; echo two</execute_bash>",
        "Which file should I change?",
        "<finish>done</finish>",
    ]);
    let base = format!("http://{addr}");
    let client = reqwest::Client::new();
    let created = post(&client, format!("{base}/sessions"), json!({ "task": "do things" })).await;
    let id = created["id"].as_str().unwrap().to_string();
    assert_eq!(id, "s1");

    // Join once the session is under way.
    tokio::time::sleep(Duration::from_millis(150)).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{id}/events")).await.unwrap();

    let mut ids = Vec::new();
    let mut answered = false;
    let mut acked = None;
    let deadline = Instant::now() + Duration::from_secs(10);
    while let Ok(Some(frame)) = tokio::time::timeout_at(deadline.into(), ws.next()).await {
        let Message::Text(text) = frame.unwrap() else { continue };
        let v: Value = serde_json::from_str(&text).unwrap();
        match v["type"].as_str().unwrap_or("event") {
            "event" => {
                let event = Event::decode(&text).unwrap();
                ids.push(event.id.0);
                if !answered && matches!(event.action(), Some(Action::Message(_))) {
                    answered = true;
                    let reply = json!({ "type": "user_message", "content": "bad.txt", "interrupt": false });
                    ws.send(Message::Text(reply.to_string())).await.unwrap();
                }
            }
            "ack" => acked = v["id"].as_u64(),
            "closed" => break,
            other => panic!("unexpected frame {other}: {text}"),
        }
    }
    let n = ids.len() as u64;
    assert_eq!(ids, (1..=n).collect::<Vec<_>>());
    let info = wait_status(&client, &base, &id).await;
    assert_eq!(info["status"], "finished");
    assert_eq!(info["events"].as_u64(), Some(n));
    assert_eq!(info["final_message"], "done");

    let user_id = acked.expect("reply acknowledged");
    let events: Vec<Event> = client.get(format!("{base}/sessions/{id}/events")).send().await.unwrap().json().await.unwrap();
    assert!(matches!(events[user_id as usize - 1].observation(), Some(Observation::UserMessage(m)) if m.content == "bad.txt"));
    let tail: Vec<Event> = client
        .get(format!("{base}/sessions/{id}/events?after={}", n - 2))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(tail.iter().map(|e| e.id.0).collect::<Vec<_>>(), vec![n - 1, n]);
}

#[tokio::test(flavor = "multi_thread")]
async fn http_interrupt_orders_cancellation_before_message() {
    let (_d, addr) = session_server(&["<execute_bash>sleep 30</execute_bash>", "<finish>stopped</finish>"]);
    let base = format!("http://{addr}");
    let client = reqwest::Client::new();
    let id = post(&client, format!("{base}/sessions"), json!({ "task": "wait" })).await["id"]
        .as_str()
        .unwrap()
        .to_string();

    tokio::time::sleep(Duration::from_millis(300)).await;
    let start = Instant::now();
    let reply = post(
        &client,
        format!("{base}/sessions/{id}/messages"),
        json!({ "content": "never mind", "interrupt": true }),
    )
    .await;
    let user_id = reply["id"].as_u64().unwrap();
    assert!(start.elapsed() < Duration::from_secs(5));

    let info = wait_status(&client, &base, &id).await;
    assert_eq!(info["status"], "finished");
    let events: Vec<Event> = client.get(format!("{base}/sessions/{id}/events")).send().await.unwrap().json().await.unwrap();
    let cancel = events
        .iter()
        .find(|e| e.observation().and_then(|o| o.as_error()).is_some_and(|e| e.category == ErrorCategory::Cancelled))
        .expect("cancellation observation");
    assert!(cancel.id.0 < user_id);
}

#[tokio::test(flavor = "multi_thread")]
async fn session_api_errors() {
    let (_d, addr) = session_server(&["Anything else?"]);
    let base = format!("http://{addr}");
    let client = reqwest::Client::new();
    let r = client.post(format!("{base}/sessions")).json(&json!({ "task": "x", "agent": "nope@1" })).send().await.unwrap();
    assert_eq!(r.status(), 400);
    assert_eq!(client.get(format!("{base}/sessions/s9")).send().await.unwrap().status(), 404);

    let id = post(&client, format!("{base}/sessions"), json!({ "task": "x" })).await["id"].as_str().unwrap().to_string();
    client.post(format!("{base}/sessions/{id}/abort")).send().await.unwrap();
    let info = wait_status(&client, &base, &id).await;
    assert_eq!(info["status"], "user_abort");
    let r = client
        .post(format!("{base}/sessions/{id}/messages"))
        .json(&json!({ "content": "late" }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 409);
    let all: Vec<Value> = client.get(format!("{base}/sessions")).send().await.unwrap().json().await.unwrap();
    assert_eq!(all.len(), 1);
}
