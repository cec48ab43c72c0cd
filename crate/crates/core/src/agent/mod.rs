//! The agent interface and the CodeAct response grammar.

mod grammar;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::event::{Action, ActionKind, SessionState};
use crate::llm::{LlmError, Meter};

pub use grammar::{parse_codeact_response, render_codeact_response, MalformedResponse, CODEACT_TAGS};

/// How an agent's model responses are turned into actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseGrammar {
    Codeact,
    Browsing,
}

/// Extra instructions and an optional action restriction layered on top of
/// an existing agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MicroOverlay {
    #[serde(default)]
    pub extra_system_text: String,
    #[serde(default)]
    pub allowed_action_kinds: Option<BTreeSet<ActionKind>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub name: String,
    pub system_message: String,
    pub grammar: ResponseGrammar,
    pub overlay: Option<MicroOverlay>,
    /// `None` permits every action kind.
    pub allowed_action_kinds: Option<BTreeSet<ActionKind>>,
    /// Turn browse blocks into delegation to `browsing_agent`.
    pub delegate_browsing: bool,
    pub browsing_agent: String,
    /// Observations longer than this are cut in the middle when shown to
    /// the model.
    pub max_observation_chars: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("agent name must not be empty")]
    EmptyName,
    #[error("agent {0} has an empty system message")]
    EmptySystemMessage(String),
    #[error("overlay leaves no permitted action kinds")]
    InvalidOverlay,
}

impl AgentConfig {
    pub fn new(name: impl Into<String>, grammar: ResponseGrammar, system_message: impl Into<String>) -> Result<Self, ConfigError> {
        let config = AgentConfig {
            name: name.into(),
            system_message: system_message.into(),
            grammar,
            overlay: None,
            allowed_action_kinds: None,
            delegate_browsing: true,
            browsing_agent: "browsing@1".into(),
            max_observation_chars: 2000,
        };
        if config.name.is_empty() {
            return Err(ConfigError::EmptyName);
        }
        if config.system_message.trim().is_empty() {
            return Err(ConfigError::EmptySystemMessage(config.name));
        }
        Ok(config)
    }

    pub fn permits(&self, kind: ActionKind) -> bool {
        self.allowed_action_kinds.as_ref().is_none_or(|set| set.contains(&kind))
    }

    /// Name plus a short hash of the system message. Sent with every
    /// completion request so a changed prompt never matches an old
    /// recording by accident.
    pub fn prompt_tag(&self) -> String {
        let digest = hex::encode(Sha256::digest(self.system_message.as_bytes()));
        format!("{} prompt={}", self.name, &digest[..12])
    }
}

pub fn apply_micro_overlay(base: &AgentConfig, overlay: &MicroOverlay) -> Result<AgentConfig, ConfigError> {
    if overlay.allowed_action_kinds.as_ref().is_some_and(|s| s.is_empty()) {
        return Err(ConfigError::InvalidOverlay);
    }
    let allowed = match (&base.allowed_action_kinds, &overlay.allowed_action_kinds) {
        (None, None) => None,
        (Some(a), None) | (None, Some(a)) => Some(a.clone()),
        (Some(a), Some(b)) => Some(a.intersection(b).copied().collect::<BTreeSet<_>>()),
    };
    if allowed.as_ref().is_some_and(|s| s.is_empty()) {
        return Err(ConfigError::InvalidOverlay);
    }
    let mut config = base.clone();
    if !overlay.extra_system_text.is_empty() {
        config.system_message = format!("{}\n{}", base.system_message, overlay.extra_system_text);
    }
    config.allowed_action_kinds = allowed;
    config.overlay = Some(overlay.clone());
    Ok(config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentStepOutput {
    pub thought: Option<String>,
    pub action: Action,
}

impl AgentStepOutput {
    pub fn new(action: Action) -> Self {
        AgentStepOutput {
            thought: action.thought().map(str::to_string),
            action,
        }
    }

    /// The action with the thought attached to its payload.
    pub fn into_action(self) -> Action {
        let thought = self.thought;
        self.action.with_thought(thought)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Malformed(#[from] MalformedResponse),
    #[error("{} actions are not permitted for agent {agent}", .kind.as_str())]
    NotPermitted { agent: String, kind: ActionKind },
}

pub trait Agent: Send + Sync {
    fn config(&self) -> &AgentConfig;

    /// Clears per-session state. Agents that keep none need not override it.
    fn reset(&self) {}

    /// Chooses the next action. Must not change `state`; every model call
    /// goes through `llm` so it is charged to the session.
    fn step(&self, state: &SessionState, llm: &Meter<'_>) -> Result<AgentStepOutput, AgentError>;
}

/// Rejects actions outside the agent's permitted set.
pub fn check_permitted(config: &AgentConfig, output: AgentStepOutput) -> Result<AgentStepOutput, AgentError> {
    let kind = output.action.kind();
    if config.permits(kind) {
        Ok(output)
    } else {
        Err(AgentError::NotPermitted {
            agent: config.name.clone(),
            kind,
        })
    }
}
