//! Reading trajectory documents back.
//!
//! A document is a sequence of sections, each an optional
//! `trajectory_header` line followed by event lines. Plain event logs
//! written by a stream sink are a single section without a header.

use serde_json::Value;

use super::{Event, EventId, EventStream, StreamError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySection {
    pub header: Option<Value>,
    pub events: Vec<Event>,
}

impl TrajectorySection {
    pub fn session(&self) -> &str {
        self.header
            .as_ref()
            .and_then(|h| h["session"].as_str())
            .unwrap_or("trajectory")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("line {line}: not a trajectory line: {message}")]
    Parse { line: usize, message: String },
    #[error("CausalityError at line {line}: {message}")]
    Causality { line: usize, message: String },
}

/// Parses `text` and checks every section against the stream invariants by
/// re-appending its events to a fresh stream: ids must be exactly the ids the
/// stream assigns, and every cause must name an earlier event.
pub fn read_trajectory(text: &str) -> Result<Vec<TrajectorySection>, TrajectoryError> {
    let mut sections: Vec<TrajectorySection> = Vec::new();
    let mut stream: Option<EventStream> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| TrajectoryError::Parse {
            line,
            message: e.to_string(),
        })?;
        if value["kind"] == "trajectory_header" {
            sections.push(TrajectorySection {
                header: Some(value),
                events: Vec::new(),
            });
            stream = None;
            continue;
        }
        let event: Event = serde_json::from_value(value).map_err(|e| TrajectoryError::Parse {
            line,
            message: e.to_string(),
        })?;
        if sections.is_empty() {
            sections.push(TrajectorySection {
                header: None,
                events: Vec::new(),
            });
        }
        let section = sections.last_mut().expect("section exists");
        let s = stream.get_or_insert_with(|| EventStream::new(section.session()));
        let expected = EventId(s.len() as u64 + 1);
        if event.id != expected {
            return Err(TrajectoryError::Causality {
                line,
                message: format!("event id {} where {} was expected", event.id, expected),
            });
        }
        s.append(event.source, event.payload.clone(), event.cause).map_err(|e| match e {
            StreamError::Causality { cause, .. } => TrajectoryError::Causality {
                line,
                message: format!("event {} names cause {cause}, which is not an earlier event", event.id),
            },
            other => TrajectoryError::Parse {
                line,
                message: other.to_string(),
            },
        })?;
        section.events.push(event);
    }
    Ok(sections)
}
