//! The per-session control loop.
//!
//! Each iteration asks the agent for one action, appends it, runs it and
//! appends the observation. Delegation runs the child session to
//! completion on the same runtime before the parent continues.

mod handle;

use std::sync::Arc;

use tracing::{debug, info, warn};

pub use handle::{PendingReply, SessionHandle};

use crate::agent::{Agent, AgentError};
use crate::agents::AgentRegistry;
use crate::event::{
    Action, ChildSession, Delegate, DelegateResult, DelegationFrame, ErrorCategory, EventId, EventStream,
    Observation, SessionLimits, SessionState, Source, StateError, TerminationReason,
};
use crate::llm::{Gateway, Meter};
use crate::runtime::{Runtime, RuntimeError};

/// Malformed responses tolerated in a row before the user is asked.
pub const MAX_REPROMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControllerOptions {
    /// Wait for the user when the agent asks a question instead of ending
    /// the session with `awaiting_user`.
    pub interactive: bool,
}

/// What to run.
#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub task: String,
    pub agent: String,
    pub limits: SessionLimits,
    pub stream: EventStream,
}

impl SessionSpec {
    pub fn new(session_id: &str, task: impl Into<String>, agent: impl Into<String>, limits: SessionLimits) -> Self {
        SessionSpec {
            task: task.into(),
            agent: agent.into(),
            limits,
            stream: EventStream::new(session_id),
        }
    }
}

#[derive(Clone)]
pub struct Controller {
    registry: Arc<AgentRegistry>,
    runtime: Arc<dyn Runtime>,
    gateway: Gateway,
    options: ControllerOptions,
}

impl std::fmt::Debug for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Controller")
            .field("registry", &self.registry)
            .field("gateway", &self.gateway)
            .field("options", &self.options)
            .finish()
    }
}

/// The last thing the agent told the user: a finish summary, else the last
/// message, else the last browser answer.
pub fn final_message(state: &SessionState) -> Option<String> {
    let events = state.events();
    let mut message = None;
    for e in &events {
        match e.action() {
            Some(Action::Finish(f)) if !f.summary.is_empty() => return Some(f.summary.clone()),
            Some(Action::Finish(f)) => {
                if let Some(t) = &f.thought {
                    return Some(t.clone());
                }
            }
            Some(Action::Message(m)) if e.source == Source::Agent => message = Some(m.content.clone()),
            _ => {}
        }
        if let Some(Observation::BrowseResult(r)) = e.observation() {
            if r.message_to_user.is_some() {
                message = r.message_to_user.clone();
            }
        }
    }
    message
}

enum Outcome {
    Continue,
    Stop(TerminationReason),
}

impl Controller {
    pub fn new(registry: Arc<AgentRegistry>, runtime: Arc<dyn Runtime>, gateway: Gateway) -> Self {
        Controller {
            registry,
            runtime,
            gateway,
            options: ControllerOptions::default(),
        }
    }

    pub fn with_options(mut self, options: ControllerOptions) -> Self {
        self.options = options;
        self
    }

    pub fn registry(&self) -> &AgentRegistry {
        &self.registry
    }

    pub fn runtime(&self) -> &Arc<dyn Runtime> {
        &self.runtime
    }

    /// Runs a session to termination.
    pub fn run_session(&self, spec: SessionSpec, handle: &SessionHandle) -> Result<SessionState, ControllerError> {
        spec.limits.validate()?;
        let agent = self
            .registry
            .get(&spec.agent)
            .ok_or_else(|| ControllerError::UnknownAgent(spec.agent.clone()))?;
        let runtime_session = spec.stream.session_id().to_string();
        let mut state = SessionState::new(spec.stream, spec.limits);
        state.agent = agent.config().name.clone();
        state.task = spec.task.clone();
        agent.reset();
        info!(session = %runtime_session, agent = %state.agent, "session started");
        let result = state
            .append_observation(Source::User, Observation::user_message(&spec.task), None)
            .map_err(ControllerError::from)
            .and_then(|_| self.drive(&mut state, agent.as_ref(), handle, &runtime_session, true));
        handle.close();
        self.runtime.close_session(&runtime_session);
        if let Err(e) = result {
            state.terminate(TerminationReason::RuntimeError);
            return Err(e);
        }
        info!(
            session = %runtime_session,
            termination = %state.termination().map(|t| t.as_str()).unwrap_or("none"),
            iterations = state.iteration(),
            cost = state.accumulated_cost(),
            "session ended"
        );
        Ok(state)
    }

    fn error(state: &mut SessionState, category: ErrorCategory, message: String, cause: Option<EventId>) -> Result<EventId, ControllerError> {
        Ok(state.append_observation(Source::Environment, Observation::error(category, message), cause)?)
    }

    fn deliver(state: &mut SessionState, handle: &SessionHandle) {
        handle.drain(|text| {
            state
                .append_observation(Source::User, Observation::user_message(text), None)
                .map_err(ControllerError::from)
        });
    }

    /// `top` sessions take user input; delegated children stop when the
    /// user interrupts so the parent can receive the message.
    fn drive(
        &self,
        state: &mut SessionState,
        agent: &dyn Agent,
        handle: &SessionHandle,
        runtime_session: &str,
        top: bool,
    ) -> Result<(), ControllerError> {
        loop {
            if top {
                Self::deliver(state, handle);
            }
            let limits = *state.limits();
            let stop = if handle.aborted() || (!top && handle.interrupted()) {
                Some(TerminationReason::UserAbort)
            } else if state.iteration() >= limits.max_iterations {
                Some(TerminationReason::MaxIterations)
            } else if state.accumulated_cost() >= limits.max_cost {
                Some(TerminationReason::MaxCost)
            } else {
                None
            };
            if let Some(reason) = stop {
                state.terminate(reason);
                return Ok(());
            }
            match self.iterate(state, agent, handle, runtime_session, top)? {
                Outcome::Continue => {}
                Outcome::Stop(reason) => {
                    state.terminate(reason);
                    return Ok(());
                }
            }
        }
    }

    fn ask_user(&self, state: &mut SessionState, handle: &SessionHandle, top: bool) -> Outcome {
        if top && handle.has_messages() {
            return Outcome::Continue;
        }
        if top && self.options.interactive {
            handle.wait_for_input();
            if handle.aborted() {
                return Outcome::Stop(TerminationReason::UserAbort);
            }
            Self::deliver(state, handle);
            return Outcome::Continue;
        }
        Outcome::Stop(TerminationReason::AwaitingUser)
    }

    fn iterate(
        &self,
        state: &mut SessionState,
        agent: &dyn Agent,
        handle: &SessionHandle,
        runtime_session: &str,
        top: bool,
    ) -> Result<Outcome, ControllerError> {
        let mut failures = 0;
        let output = loop {
            let meter = Meter::new(&self.gateway);
            let result = agent.step(state, &meter);
            state.add_cost(meter.cost())?;
            match result {
                Ok(output) => break output,
                Err(AgentError::Llm(e)) => {
                    warn!(session = %state.session_id(), error = %e, "model call failed");
                    Self::error(state, ErrorCategory::AgentError, e.to_string(), None)?;
                    return Ok(self.ask_user(state, handle, top));
                }
                Err(e) => {
                    failures += 1;
                    let category = match e {
                        AgentError::NotPermitted { .. } => ErrorCategory::NotPermitted,
                        _ => ErrorCategory::MalformedResponse,
                    };
                    debug!(session = %state.session_id(), failures, error = %e, "rejected response");
                    Self::error(state, category, e.to_string(), None)?;
                    if failures > MAX_REPROMPTS {
                        Self::error(
                            state,
                            ErrorCategory::MalformedResponse,
                            format!("no valid action after {failures} attempts; asking the user for help"),
                            None,
                        )?;
                        return Ok(self.ask_user(state, handle, top));
                    }
                    if state.accumulated_cost() >= state.limits().max_cost {
                        return Ok(Outcome::Stop(TerminationReason::MaxCost));
                    }
                }
            }
        };

        let action = output.into_action();
        let id = state.append_action(Source::Agent, action.clone())?;
        debug!(session = %state.session_id(), id = %id, kind = %action.kind(), "action");
        let observation = match &action {
            Action::Finish(_) => return Ok(Outcome::Stop(TerminationReason::Finished)),
            Action::Message(m) if m.wait_for_user => return Ok(self.ask_user(state, handle, top)),
            Action::Message(_) => return Ok(Outcome::Continue),
            Action::Delegate(d) => self.delegate(state, d, handle, runtime_session)?,
            _ => {
                let token = handle.begin_action();
                let result = if token.is_cancelled() {
                    Ok(Observation::error(ErrorCategory::Cancelled, "interrupted before the action started"))
                } else {
                    self.runtime.execute(runtime_session, &action, &token)
                };
                handle.end_action();
                match result {
                    Ok(obs) => obs,
                    Err(e @ RuntimeError::Unavailable(_)) => {
                        Self::error(state, ErrorCategory::Runtime, e.to_string(), Some(id))?;
                        return Ok(Outcome::Stop(TerminationReason::RuntimeError));
                    }
                    Err(e) => Observation::error(ErrorCategory::Runtime, e.to_string()),
                }
            }
        };
        state.append_observation(Source::Environment, observation, Some(id))?;
        Ok(Outcome::Continue)
    }

    fn delegate(
        &self,
        parent: &mut SessionState,
        d: &Delegate,
        handle: &SessionHandle,
        runtime_session: &str,
    ) -> Result<Observation, ControllerError> {
        let limits = *parent.limits();
        if parent.delegation_depth() >= limits.max_delegation_depth {
            return Ok(Observation::error(
                ErrorCategory::DelegationDepthExceeded,
                format!("delegation depth limit {} reached", limits.max_delegation_depth),
            ));
        }
        let Some(agent) = self.registry.get(&d.agent) else {
            return Ok(Observation::error(ErrorCategory::UnknownAgent, format!("unknown agent {}", d.agent)));
        };
        let child_limits = SessionLimits {
            max_iterations: limits.max_iterations.saturating_sub(parent.iteration()),
            max_cost: (limits.max_cost - parent.accumulated_cost()).max(0.0),
            max_delegation_depth: limits.max_delegation_depth,
        };
        let name = agent.config().name.clone();
        let child_id = format!("{}/{}:{}", parent.session_id(), parent.children().len() + 1, name);
        let mut child =
            SessionState::new(EventStream::new(child_id), child_limits).with_depth(parent.delegation_depth() + 1);
        child.agent = name.clone();
        child.task = d.subtask.clone();
        parent.push_delegation(DelegationFrame {
            parent_session: parent.session_id().to_string(),
            agent: name.clone(),
            subtask: d.subtask.clone(),
            child_cost: 0.0,
        });
        info!(parent = %parent.session_id(), child = %child.session_id(), "delegating");
        agent.reset();
        child.append_observation(Source::User, Observation::user_message(&d.subtask), None)?;
        self.drive(&mut child, agent.as_ref(), handle, runtime_session, false)?;

        let cost = child.accumulated_cost();
        parent.add_cost(cost)?;
        let mut frame = parent.pop_delegation().expect("frame pushed above");
        frame.child_cost = cost;
        let result = DelegateResult {
            agent: name,
            summary: final_message(&child).unwrap_or_default(),
            cost,
            termination: child.termination().unwrap_or(TerminationReason::RuntimeError),
        };
        parent.record_child(ChildSession { frame, state: child });
        Ok(Observation::DelegateResult(result))
    }
}

/// Runs `agent` on `task` headlessly, with the built-in agents available
/// for delegation.
pub fn run_session(
    task: &str,
    agent: Arc<dyn Agent>,
    runtime: Arc<dyn Runtime>,
    gateway: Gateway,
    limits: SessionLimits,
) -> Result<SessionState, ControllerError> {
    let mut registry = AgentRegistry::builtin();
    let name = agent.config().name.clone();
    registry.insert(agent);
    let controller = Controller::new(Arc::new(registry), runtime, gateway);
    let session = "session";
    controller.run_session(SessionSpec::new(session, task, name, limits), &SessionHandle::new(session))
}
