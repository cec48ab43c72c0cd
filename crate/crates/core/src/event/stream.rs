use std::io::Write;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use super::{Event, EventId, Payload, Source, Timestamp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StreamError {
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error("cause {cause} does not refer to an earlier event in session {session}")]
    Causality { session: String, cause: EventId },
    #[error("failed to persist event: {0}")]
    Sink(String),
}

struct Inner {
    session_id: String,
    data: Mutex<StreamData>,
}

struct StreamData {
    events: Vec<Arc<Event>>,
    closed: bool,
    subscribers: Vec<Sender<Arc<Event>>>,
    sink: Option<Box<dyn Write + Send>>,
}

/// Append-only, totally ordered log of one session.
///
/// Cloning yields another handle to the same stream. Appends are serialized
/// by an internal lock, so readers always observe a consistent prefix.
#[derive(Clone)]
pub struct EventStream {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for EventStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventStream")
            .field("session_id", &self.inner.session_id)
            .field("len", &self.len())
            .finish()
    }
}

impl EventStream {
    pub fn new(session_id: impl Into<String>) -> Self {
        EventStream {
            inner: Arc::new(Inner {
                session_id: session_id.into(),
                data: Mutex::new(StreamData {
                    events: Vec::new(),
                    closed: false,
                    subscribers: Vec::new(),
                    sink: None,
                }),
            }),
        }
    }

    /// Stream that also writes each appended event, encoded, to `sink`
    /// before `append` returns.
    pub fn with_sink(session_id: impl Into<String>, sink: Box<dyn Write + Send>) -> Self {
        let stream = Self::new(session_id);
        stream.lock().sink = Some(sink);
        stream
    }

    fn lock(&self) -> MutexGuard<'_, StreamData> {
        self.inner.data.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn session_id(&self) -> &str {
        &self.inner.session_id
    }

    pub fn append(
        &self,
        source: Source,
        payload: impl Into<Payload>,
        cause: Option<EventId>,
    ) -> Result<EventId, StreamError> {
        let mut data = self.lock();
        if data.closed {
            return Err(StreamError::SessionClosed(self.inner.session_id.clone()));
        }
        let next = EventId(data.events.len() as u64 + 1);
        if let Some(cause) = cause {
            // ids are dense, so membership is a range check
            if cause.0 == 0 || cause.0 >= next.0 {
                return Err(StreamError::Causality {
                    session: self.inner.session_id.clone(),
                    cause,
                });
            }
        }
        let event = Arc::new(Event {
            id: next,
            timestamp: Timestamp::now(),
            source,
            payload: payload.into(),
            cause,
        });
        if let Some(sink) = data.sink.as_mut() {
            writeln!(sink, "{}", event.encode())
                .and_then(|_| sink.flush())
                .map_err(|e| StreamError::Sink(e.to_string()))?;
        }
        data.events.push(event.clone());
        data.subscribers.retain(|tx| tx.send(event.clone()).is_ok());
        Ok(next)
    }

    /// Marks the stream closed. Subscribers see their channel disconnect
    /// once they have drained it.
    pub fn close(&self) {
        let mut data = self.lock();
        data.closed = true;
        data.subscribers.clear();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub fn len(&self) -> usize {
        self.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<Arc<Event>> {
        self.lock().events.clone()
    }

    pub fn get(&self, id: EventId) -> Option<Arc<Event>> {
        let data = self.lock();
        let idx = usize::try_from(id.0).ok()?.checked_sub(1)?;
        data.events.get(idx).cloned()
    }

    pub fn last_id(&self) -> Option<EventId> {
        self.lock().events.last().map(|e| e.id)
    }

    /// Every event so far followed by every future event, without gaps.
    pub fn subscribe(&self) -> Subscription {
        let mut data = self.lock();
        let backlog = data.events.clone();
        let (tx, rx) = mpsc::channel();
        for event in backlog {
            let _ = tx.send(event);
        }
        if !data.closed {
            data.subscribers.push(tx);
        }
        Subscription { rx }
    }
}

/// Ordered feed of a stream's events; ends when the stream is closed.
pub struct Subscription {
    rx: Receiver<Arc<Event>>,
}

impl Subscription {
    /// `Ok(None)` on timeout, `Err(())` once the stream is closed and drained.
    #[allow(clippy::result_unit_err)]
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Arc<Event>>, ()> {
        match self.rx.recv_timeout(timeout) {
            Ok(e) => Ok(Some(e)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(()),
        }
    }
}

impl Iterator for Subscription {
    type Item = Arc<Event>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.recv().ok()
    }
}
