//! Cross-thread control of a running session.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use super::ControllerError;
use crate::event::EventId;
use crate::runtime::CancelToken;

struct Pending {
    text: String,
    reply: mpsc::Sender<Result<EventId, ControllerError>>,
}

#[derive(Default)]
struct Shared {
    queue: VecDeque<Pending>,
    in_flight: Option<CancelToken>,
    interrupt_pending: bool,
    aborted: bool,
    closed: bool,
}

/// Lets other threads send user messages to a session, interrupt the
/// action it is running, or abort it.
///
/// Messages are applied by the control loop between steps, in arrival
/// order.
#[derive(Clone, Default)]
pub struct SessionHandle {
    inner: Arc<(Mutex<Shared>, Condvar)>,
    session: Arc<str>,
}

impl std::fmt::Debug for SessionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionHandle").field("session", &self.session).finish()
    }
}

/// Reply to a submitted message, resolved once the control loop appends it.
#[derive(Debug)]
pub struct PendingReply(mpsc::Receiver<Result<EventId, ControllerError>>, Arc<str>);

impl PendingReply {
    pub fn wait(self) -> Result<EventId, ControllerError> {
        self.0.recv().unwrap_or_else(|_| Err(ControllerError::SessionClosed(self.1.to_string())))
    }

    pub fn wait_timeout(&self, timeout: Duration) -> Option<Result<EventId, ControllerError>> {
        self.0.recv_timeout(timeout).ok()
    }
}

impl SessionHandle {
    pub fn new(session: &str) -> Self {
        SessionHandle {
            inner: Arc::default(),
            session: session.into(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.inner.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Queues a user message. With `interrupt`, the action in flight (if
    /// any) is cancelled first, so its observation precedes the message.
    pub fn submit(&self, text: impl Into<String>, interrupt: bool) -> Result<PendingReply, ControllerError> {
        let mut s = self.lock();
        if s.closed {
            return Err(ControllerError::SessionClosed(self.session.to_string()));
        }
        let (tx, rx) = mpsc::channel();
        s.queue.push_back(Pending {
            text: text.into(),
            reply: tx,
        });
        if interrupt {
            s.interrupt_pending = true;
            if let Some(token) = &s.in_flight {
                token.cancel();
            }
        }
        self.inner.1.notify_all();
        Ok(PendingReply(rx, self.session.clone()))
    }

    /// Like [`submit`](Self::submit), blocking until the message is in the
    /// event stream.
    pub fn inject_user_message(&self, text: impl Into<String>, interrupt: bool) -> Result<EventId, ControllerError> {
        self.submit(text, interrupt)?.wait()
    }

    /// Stops the session at the next step boundary, cancelling the action
    /// in flight.
    pub fn abort(&self) {
        let mut s = self.lock();
        s.aborted = true;
        if let Some(token) = &s.in_flight {
            token.cancel();
        }
        self.inner.1.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub(super) fn aborted(&self) -> bool {
        self.lock().aborted
    }

    pub(super) fn interrupted(&self) -> bool {
        let s = self.lock();
        s.aborted || s.interrupt_pending
    }

    pub(super) fn has_messages(&self) -> bool {
        !self.lock().queue.is_empty()
    }

    /// Token for the next action; already cancelled if an interrupt is
    /// waiting.
    pub(super) fn begin_action(&self) -> CancelToken {
        let mut s = self.lock();
        let token = CancelToken::new();
        if s.interrupt_pending || s.aborted {
            token.cancel();
        }
        s.in_flight = Some(token.clone());
        token
    }

    pub(super) fn end_action(&self) {
        self.lock().in_flight = None;
    }

    /// Hands every queued message to `append`, replying with its id.
    pub(super) fn drain(&self, mut append: impl FnMut(&str) -> Result<EventId, ControllerError>) {
        let pending: Vec<Pending> = {
            let mut s = self.lock();
            s.interrupt_pending = false;
            s.queue.drain(..).collect()
        };
        for p in pending {
            let _ = p.reply.send(append(&p.text));
        }
    }

    /// Blocks until a message arrives or the session is aborted.
    pub(super) fn wait_for_input(&self) {
        let mut s = self.lock();
        while s.queue.is_empty() && !s.aborted {
            s = self.inner.1.wait(s).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// Refuses further messages and fails the ones still queued.
    pub(super) fn close(&self) {
        let pending: Vec<Pending> = {
            let mut s = self.lock();
            s.closed = true;
            s.queue.drain(..).collect()
        };
        for p in pending {
            let _ = p.reply.send(Err(ControllerError::SessionClosed(self.session.to_string())));
        }
    }
}
