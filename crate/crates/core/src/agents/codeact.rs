//! The CodeAct generalist.

use crate::agent::{
    check_permitted, parse_codeact_response, render_codeact_response, Agent, AgentConfig, AgentError, AgentStepOutput,
};
use crate::event::{Action, HistoryEntry, Observation, SessionState, Source};
use crate::llm::{ChatMessage, CompletionRequest, Meter, Role};

use super::{observation_text, truncate_middle};

#[derive(Debug, Clone)]
pub struct CodeActAgent {
    config: AgentConfig,
}

impl CodeActAgent {
    pub fn new(config: AgentConfig) -> Self {
        CodeActAgent { config }
    }

    /// System message followed by the session history as alternating
    /// assistant actions and user observations.
    pub fn messages(&self, state: &SessionState) -> Vec<ChatMessage> {
        let mut messages = vec![ChatMessage::new(Role::System, &self.config.system_message)];
        let limit = self.config.max_observation_chars;
        let observation = |obs: &Observation| match obs {
            Observation::UserMessage(m) => m.content.clone(),
            other => format!("OBSERVATION:\n{}", truncate_middle(&observation_text(other), limit)),
        };
        for entry in state.history() {
            match entry {
                HistoryEntry::Standalone(e) => {
                    if let Some(obs) = e.observation() {
                        messages.push(ChatMessage::new(Role::User, observation(obs)));
                    }
                }
                HistoryEntry::Step { action, observation: obs } => {
                    if let Some(a) = action.action() {
                        let text = render_codeact_response(&AgentStepOutput::new(a.clone()));
                        let role = if action.source == Source::Agent { Role::Assistant } else { Role::User };
                        messages.push(ChatMessage::new(role, text));
                    }
                    if let Some(o) = obs.as_ref().and_then(|o| o.observation()) {
                        messages.push(ChatMessage::new(Role::User, observation(o)));
                    }
                }
            }
        }
        messages
    }
}

impl Agent for CodeActAgent {
    fn config(&self) -> &AgentConfig {
        &self.config
    }

    fn step(&self, state: &SessionState, llm: &Meter<'_>) -> Result<AgentStepOutput, AgentError> {
        let request = CompletionRequest::new(self.messages(state)).with_agent(self.config.prompt_tag());
        let completion = llm.complete(&request)?;
        let mut out = parse_codeact_response(&completion.text)?;
        if self.config.delegate_browsing {
            if let Action::Browse(b) = &out.action {
                out.action = Action::delegate(&self.config.browsing_agent, &b.program);
            }
        }
        check_permitted(&self.config, out)
    }
}
