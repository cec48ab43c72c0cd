//! Actions, observations and the per-session event stream.
//!
//! Every interaction between an agent, the user and the sandbox is recorded as
//! an [`Event`]. Events are appended to an [`EventStream`] which assigns dense,
//! strictly increasing ids starting at 1. The JSON encoding produced by
//! [`Event::encode`] is the wire format for trajectory files, recordings and
//! the UI feed.

mod history;
mod state;
mod stream;
mod trajectory;

use std::fmt;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use history::{history_pairs, HistoryEntry};
pub use state::{ChildSession, DelegationFrame, SessionLimits, SessionState, StateError, TerminationReason};
pub use stream::{EventStream, StreamError, Subscription};
pub use trajectory::{read_trajectory, TrajectoryError, TrajectorySection};

/// Per-session event id. The first event of a session has id 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Agent,
    User,
    Environment,
}

/// Discriminant of an [`Action`], used for permission sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    ShellCommand,
    CodeCell,
    Browse,
    Message,
    Delegate,
    Finish,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::ShellCommand,
        ActionKind::CodeCell,
        ActionKind::Browse,
        ActionKind::Message,
        ActionKind::Delegate,
        ActionKind::Finish,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::ShellCommand => "shell_command",
            ActionKind::CodeCell => "code_cell",
            ActionKind::Browse => "browse",
            ActionKind::Message => "message",
            ActionKind::Delegate => "delegate",
            ActionKind::Finish => "finish",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Default shell timeout in seconds.
pub const DEFAULT_SHELL_TIMEOUT_S: u64 = 120;

fn default_shell_timeout() -> u64 {
    DEFAULT_SHELL_TIMEOUT_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellCommand {
    pub command: String,
    #[serde(default = "default_shell_timeout")]
    pub timeout_s: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeCell {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Browse {
    /// Raw browsing-DSL program text.
    pub program: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub content: String,
    pub wait_for_user: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delegate {
    pub agent: String,
    pub subtask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finish {
    #[serde(default)]
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
}

/// An intent originated by an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Action {
    ShellCommand(ShellCommand),
    CodeCell(CodeCell),
    Browse(Browse),
    Message(Message),
    Delegate(Delegate),
    Finish(Finish),
}

impl Action {
    pub fn shell(command: impl Into<String>) -> Self {
        Action::ShellCommand(ShellCommand {
            command: command.into(),
            timeout_s: DEFAULT_SHELL_TIMEOUT_S,
            thought: None,
        })
    }

    pub fn shell_with_timeout(command: impl Into<String>, timeout_s: u64) -> Self {
        Action::ShellCommand(ShellCommand {
            command: command.into(),
            timeout_s,
            thought: None,
        })
    }

    pub fn code_cell(source: impl Into<String>) -> Self {
        Action::CodeCell(CodeCell {
            source: source.into(),
            thought: None,
        })
    }

    pub fn browse(program: impl Into<String>) -> Self {
        Action::Browse(Browse {
            program: program.into(),
            thought: None,
        })
    }

    /// Agent-to-user message. `wait_for_user` is always set: messages hand
    /// the turn to the user.
    pub fn message(content: impl Into<String>) -> Self {
        Action::Message(Message {
            content: content.into(),
            wait_for_user: true,
            thought: None,
        })
    }

    pub fn delegate(agent: impl Into<String>, subtask: impl Into<String>) -> Self {
        Action::Delegate(Delegate {
            agent: agent.into(),
            subtask: subtask.into(),
            thought: None,
        })
    }

    pub fn finish(summary: impl Into<String>) -> Self {
        Action::Finish(Finish {
            summary: summary.into(),
            thought: None,
        })
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::ShellCommand(_) => ActionKind::ShellCommand,
            Action::CodeCell(_) => ActionKind::CodeCell,
            Action::Browse(_) => ActionKind::Browse,
            Action::Message(_) => ActionKind::Message,
            Action::Delegate(_) => ActionKind::Delegate,
            Action::Finish(_) => ActionKind::Finish,
        }
    }

    pub fn thought(&self) -> Option<&str> {
        match self {
            Action::ShellCommand(a) => a.thought.as_deref(),
            Action::CodeCell(a) => a.thought.as_deref(),
            Action::Browse(a) => a.thought.as_deref(),
            Action::Message(a) => a.thought.as_deref(),
            Action::Delegate(a) => a.thought.as_deref(),
            Action::Finish(a) => a.thought.as_deref(),
        }
    }

    pub fn with_thought(mut self, thought: Option<String>) -> Self {
        let slot = match &mut self {
            Action::ShellCommand(a) => &mut a.thought,
            Action::CodeCell(a) => &mut a.thought,
            Action::Browse(a) => &mut a.thought,
            Action::Message(a) => &mut a.thought,
            Action::Delegate(a) => &mut a.thought,
            Action::Finish(a) => &mut a.thought,
        };
        *slot = thought.filter(|t| !t.is_empty());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellResult {
    pub exit_code: i32,
    /// Interleaved stdout and stderr.
    pub output: String,
    /// Working directory after the command ran.
    pub cwd: String,
    #[serde(default)]
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub output: String,
}

/// Whether a browsing episode is still going after the last program ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    #[default]
    Running,
    /// `send_msg_to_user` was executed.
    Answered,
    /// `report_infeasible` was executed.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrowseResult {
    /// Rendered accessibility tree of the active tab.
    pub observation: String,
    pub url: String,
    /// `None` when every call of the program succeeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_to_user: Option<String>,
    #[serde(default)]
    pub episode: EpisodeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMessage {
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegateResult {
    pub agent: String,
    pub summary: String,
    pub cost: f64,
    pub termination: TerminationReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Cancelled,
    Timeout,
    MalformedResponse,
    NotPermitted,
    AgentError,
    BrowseParse,
    DelegationDepthExceeded,
    UnknownAgent,
    NotExecutable,
    Runtime,
    CellRestarted,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Cancelled => "cancelled",
            ErrorCategory::Timeout => "timeout",
            ErrorCategory::MalformedResponse => "malformed_response",
            ErrorCategory::NotPermitted => "not_permitted",
            ErrorCategory::AgentError => "agent_error",
            ErrorCategory::BrowseParse => "browse_parse",
            ErrorCategory::DelegationDepthExceeded => "delegation_depth_exceeded",
            ErrorCategory::UnknownAgent => "unknown_agent",
            ErrorCategory::NotExecutable => "not_executable",
            ErrorCategory::Runtime => "runtime",
            ErrorCategory::CellRestarted => "cell_restarted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorObservation {
    pub category: ErrorCategory,
    pub message: String,
}

/// Result of an action, or an unsolicited message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Observation {
    ShellResult(ShellResult),
    CellResult(CellResult),
    BrowseResult(BrowseResult),
    UserMessage(UserMessage),
    DelegateResult(DelegateResult),
    Error(ErrorObservation),
}

impl Observation {
    pub fn error(category: ErrorCategory, message: impl Into<String>) -> Self {
        Observation::Error(ErrorObservation {
            category,
            message: message.into(),
        })
    }

    pub fn user_message(content: impl Into<String>) -> Self {
        Observation::UserMessage(UserMessage {
            content: content.into(),
        })
    }

    pub fn as_error(&self) -> Option<&ErrorObservation> {
        match self {
            Observation::Error(e) => Some(e),
            _ => None,
        }
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            Observation::ShellResult(_) => "shell_result",
            Observation::CellResult(_) => "cell_result",
            Observation::BrowseResult(_) => "browse_result",
            Observation::UserMessage(_) => "user_message",
            Observation::DelegateResult(_) => "delegate_result",
            Observation::Error(_) => "error",
        }
    }

    /// The action kind this observation answers. `None` for unsolicited
    /// user messages and for errors, which may answer any action.
    pub fn answers(&self) -> Option<ActionKind> {
        match self {
            Observation::ShellResult(_) => Some(ActionKind::ShellCommand),
            Observation::CellResult(_) => Some(ActionKind::CodeCell),
            Observation::BrowseResult(_) => Some(ActionKind::Browse),
            Observation::DelegateResult(_) => Some(ActionKind::Delegate),
            Observation::UserMessage(_) | Observation::Error(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Action(Action),
    Observation(Observation),
}

impl Payload {
    pub fn kind_str(&self) -> &'static str {
        match self {
            Payload::Action(a) => a.kind().as_str(),
            Payload::Observation(o) => o.kind_str(),
        }
    }

    pub fn as_action(&self) -> Option<&Action> {
        match self {
            Payload::Action(a) => Some(a),
            Payload::Observation(_) => None,
        }
    }

    pub fn as_observation(&self) -> Option<&Observation> {
        match self {
            Payload::Observation(o) => Some(o),
            Payload::Action(_) => None,
        }
    }
}

impl From<Action> for Payload {
    fn from(a: Action) -> Self {
        Payload::Action(a)
    }
}

impl From<Observation> for Payload {
    fn from(o: Observation) -> Self {
        Payload::Observation(o)
    }
}

/// Wall-clock time with microsecond resolution so the text encoding
/// round-trips exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn now() -> Self {
        Self::from_micros(Utc::now().timestamp_micros())
    }

    pub fn from_micros(micros: i64) -> Self {
        Timestamp(DateTime::from_timestamp_micros(micros).unwrap_or_default())
    }

    pub fn as_micros(&self) -> i64 {
        self.0.timestamp_micros()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Micros, true))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        let parsed = DateTime::parse_from_rfc3339(&raw).map_err(serde::de::Error::custom)?;
        Ok(Timestamp::from_micros(parsed.timestamp_micros()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("malformed event document: {0}")]
    Json(#[from] serde_json::Error),
}

/// One element of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: EventId,
    pub timestamp: Timestamp,
    pub source: Source,
    #[serde(flatten)]
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<EventId>,
}

impl Event {
    pub fn action(&self) -> Option<&Action> {
        self.payload.as_action()
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.payload.as_observation()
    }

    fn to_value(&self) -> serde_json::Value {
        // serde_json's map is ordered by key, which gives the canonical
        // sorted-key layout for free.
        serde_json::to_value(self).expect("events always serialize")
    }

    /// One-line JSON document with sorted keys.
    pub fn encode(&self) -> String {
        self.to_value().to_string()
    }

    /// Encoding without the timestamp, used for equality across runs.
    pub fn encode_canonical(&self) -> String {
        let mut value = self.to_value();
        if let Some(map) = value.as_object_mut() {
            map.remove("timestamp");
        }
        value.to_string()
    }

    pub fn decode(document: &str) -> Result<Event, CodecError> {
        Ok(serde_json::from_str(document)?)
    }
}
