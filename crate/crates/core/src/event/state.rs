use std::fmt;

use serde::{Deserialize, Serialize};

use super::{history_pairs, Action, Event, EventId, EventStream, HistoryEntry, Observation, Source, StreamError};

/// Why a session stopped. The string forms are part of the trajectory format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Finished,
    AwaitingUser,
    MaxIterations,
    MaxCost,
    UserAbort,
    RuntimeError,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::Finished => "finished",
            TerminationReason::AwaitingUser => "awaiting_user",
            TerminationReason::MaxIterations => "max_iterations",
            TerminationReason::MaxCost => "max_cost",
            TerminationReason::UserAbort => "user_abort",
            TerminationReason::RuntimeError => "runtime_error",
        }
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionLimits {
    pub max_iterations: u32,
    pub max_cost: f64,
    pub max_delegation_depth: u32,
}

impl Default for SessionLimits {
    fn default() -> Self {
        SessionLimits {
            max_iterations: 30,
            max_cost: 10.0,
            max_delegation_depth: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("cost increment must be finite and nonnegative, got {0}")]
    NegativeCost(f64),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

impl SessionLimits {
    pub fn validate(&self) -> Result<(), StateError> {
        if self.max_iterations == 0 {
            return Err(StateError::InvalidLimits("max_iterations must be positive".into()));
        }
        if !(self.max_cost.is_finite() && self.max_cost > 0.0) {
            return Err(StateError::InvalidLimits("max_cost must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationFrame {
    pub parent_session: String,
    pub agent: String,
    pub subtask: String,
    pub child_cost: f64,
}

/// A finished child session, kept for trajectory output.
#[derive(Debug, Clone)]
pub struct ChildSession {
    pub frame: DelegationFrame,
    pub state: SessionState,
}

/// Everything an agent may look at when choosing its next action.
#[derive(Debug, Clone)]
pub struct SessionState {
    stream: EventStream,
    accumulated_cost: f64,
    iteration: u32,
    delegation_depth: u32,
    limits: SessionLimits,
    delegation_stack: Vec<DelegationFrame>,
    termination: Option<TerminationReason>,
    children: Vec<ChildSession>,
    /// Name of the agent driving this session, for trajectory headers.
    pub agent: String,
    pub task: String,
}

impl SessionState {
    pub fn new(stream: EventStream, limits: SessionLimits) -> Self {
        SessionState {
            stream,
            accumulated_cost: 0.0,
            iteration: 0,
            delegation_depth: 0,
            limits,
            delegation_stack: Vec::new(),
            termination: None,
            children: Vec::new(),
            agent: String::new(),
            task: String::new(),
        }
    }

    pub fn with_depth(mut self, depth: u32) -> Self {
        self.delegation_depth = depth.min(self.limits.max_delegation_depth);
        self
    }

    pub fn session_id(&self) -> &str {
        self.stream.session_id()
    }

    pub fn stream(&self) -> &EventStream {
        &self.stream
    }

    pub fn events(&self) -> Vec<std::sync::Arc<Event>> {
        self.stream.snapshot()
    }

    pub fn history(&self) -> Vec<HistoryEntry> {
        history_pairs(&self.events())
    }

    pub fn accumulated_cost(&self) -> f64 {
        self.accumulated_cost
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn delegation_depth(&self) -> u32 {
        self.delegation_depth
    }

    pub fn limits(&self) -> &SessionLimits {
        &self.limits
    }

    pub fn delegation_stack(&self) -> &[DelegationFrame] {
        &self.delegation_stack
    }

    pub fn termination(&self) -> Option<TerminationReason> {
        self.termination
    }

    pub fn children(&self) -> &[ChildSession] {
        &self.children
    }

    pub fn add_cost(&mut self, amount: f64) -> Result<(), StateError> {
        if !(amount.is_finite() && amount >= 0.0) {
            return Err(StateError::NegativeCost(amount));
        }
        self.accumulated_cost += amount;
        Ok(())
    }

    /// Appends an action; agent actions advance the iteration counter.
    pub fn append_action(&mut self, source: Source, action: Action) -> Result<EventId, StateError> {
        let id = self.stream.append(source, action, None)?;
        if source == Source::Agent {
            self.iteration += 1;
        }
        Ok(id)
    }

    pub fn append_observation(
        &mut self,
        source: Source,
        observation: Observation,
        cause: Option<EventId>,
    ) -> Result<EventId, StateError> {
        Ok(self.stream.append(source, observation, cause)?)
    }

    pub fn push_delegation(&mut self, frame: DelegationFrame) {
        self.delegation_stack.push(frame);
    }

    pub fn pop_delegation(&mut self) -> Option<DelegationFrame> {
        self.delegation_stack.pop()
    }

    pub fn record_child(&mut self, child: ChildSession) {
        self.children.push(child);
    }

    pub fn terminate(&mut self, reason: TerminationReason) {
        if self.termination.is_none() {
            self.termination = Some(reason);
        }
        self.stream.close();
    }

    fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "trajectory_header",
            "session": self.session_id(),
            "agent": self.agent,
            "task": self.task,
            "termination": self.termination,
            "accumulated_cost": self.accumulated_cost,
            "iteration": self.iteration,
            "delegation_depth": self.delegation_depth,
            "limits": self.limits,
        })
    }

    /// Trajectory document: a header line followed by one event per line,
    /// then the same layout for every child session in delegation order.
    pub fn to_trajectory(&self) -> String {
        self.render(false)
    }

    /// Like [`to_trajectory`](Self::to_trajectory) with timestamps removed;
    /// two runs of the same recording produce identical documents.
    pub fn to_canonical_trajectory(&self) -> String {
        self.render(true)
    }

    fn render(&self, canonical: bool) -> String {
        let mut out = String::new();
        out.push_str(&self.header().to_string());
        out.push('\n');
        for event in self.events() {
            out.push_str(&if canonical { event.encode_canonical() } else { event.encode() });
            out.push('\n');
        }
        for child in &self.children {
            out.push_str(&child.state.render(canonical));
        }
        out
    }
}
