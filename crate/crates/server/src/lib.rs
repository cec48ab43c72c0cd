//! Network surfaces of agentkernel.
//!
//! * [`action_api`] runs inside the sandbox and executes actions for a
//!   [`Runtime`](agentkernel::runtime::Runtime).
//! * [`RemoteRuntime`] is the client side: a `Runtime` that forwards every
//!   action to an action API over HTTP.
//! * [`sessions`] hosts interactive sessions for front ends, with a
//!   WebSocket feed of each session's events.

pub mod action_api;
mod remote;
pub mod sessions;

pub use remote::RemoteRuntime;

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: axum::Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}
