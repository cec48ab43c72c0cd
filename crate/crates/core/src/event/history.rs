use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::{Event, EventId};

/// One entry of an agent's view of the session.
#[derive(Debug, Clone, PartialEq)]
pub enum HistoryEntry {
    /// An action and the observation it caused, if any yet.
    Step {
        action: Arc<Event>,
        observation: Option<Arc<Event>>,
    },
    /// An observation without a cause: user messages and environment notices.
    Standalone(Arc<Event>),
}

impl HistoryEntry {
    /// Id that positions the entry in the stream.
    pub fn anchor(&self) -> EventId {
        match self {
            HistoryEntry::Step { action, .. } => action.id,
            HistoryEntry::Standalone(e) => e.id,
        }
    }
}

/// Pairs each action with its observation, in stream order.
///
/// Entries are ordered by the id of their action (or of the standalone
/// observation). When several observations name the same cause, the first
/// one wins; later ones surface as standalone entries.
pub fn history_pairs(events: &[Arc<Event>]) -> Vec<HistoryEntry> {
    let mut answered: HashMap<EventId, Arc<Event>> = HashMap::new();
    let mut extra: HashSet<EventId> = HashSet::new();
    for event in events {
        if let (Some(_), Some(cause)) = (event.observation(), event.cause) {
            if answered.contains_key(&cause) {
                extra.insert(event.id);
            } else {
                answered.insert(cause, event.clone());
            }
        }
    }
    events
        .iter()
        .filter_map(|event| {
            if event.action().is_some() {
                Some(HistoryEntry::Step {
                    action: event.clone(),
                    observation: answered.get(&event.id).cloned(),
                })
            } else if event.cause.is_none() || extra.contains(&event.id) {
                Some(HistoryEntry::Standalone(event.clone()))
            } else {
                None
            }
        })
        .collect()
}
