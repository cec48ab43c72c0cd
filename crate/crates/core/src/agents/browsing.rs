//! The browsing specialist.

use std::sync::Arc;

use crate::agent::{check_permitted, Agent, AgentConfig, AgentError, AgentStepOutput, MalformedResponse};
use crate::browse::{action_space_description, render_observation, ActionSubset, BrowserState, Site};
use crate::event::{Action, BrowseResult, EpisodeStatus, Event, Observation, SessionState};
use crate::llm::{ChatMessage, CompletionRequest, Meter, Role};

const INSTRUCTIONS: &str = include_str!("../../prompts/browsing_instructions.md");
const EXAMPLES: &str = include_str!("../../prompts/browsing_examples.md");

#[derive(Debug, Clone)]
pub struct BrowsingAgent {
    config: AgentConfig,
    subset: ActionSubset,
}

impl BrowsingAgent {
    pub fn new(config: AgentConfig) -> Self {
        BrowsingAgent {
            config,
            subset: ActionSubset::browsing_default(),
        }
    }

    pub fn with_subset(mut self, subset: ActionSubset) -> Self {
        self.subset = subset;
        self
    }
}

fn last_browse_result(events: &[Arc<Event>]) -> Option<&BrowseResult> {
    events.iter().rev().find_map(|e| match e.observation() {
        Some(Observation::BrowseResult(r)) => Some(r),
        _ => None,
    })
}

/// The error shown to the model, if the latest observation reports one.
fn last_error(events: &[Arc<Event>]) -> Option<String> {
    match events.iter().rev().find_map(|e| e.observation())? {
        Observation::BrowseResult(r) => r.error.clone(),
        Observation::Error(e) => Some(e.message.clone()),
        _ => None,
    }
}

/// Builds the single-turn prompt for the next browsing step.
pub fn browsing_prompt(goal: &str, events: &[Arc<Event>], subset: &ActionSubset) -> String {
    let tree = match last_browse_result(events) {
        Some(r) => r.observation.clone(),
        None => render_observation(&BrowserState::new(Arc::new(Site::default()))),
    };
    let previous: Vec<&str> = events
        .iter()
        .filter_map(|e| match e.action() {
            Some(Action::Browse(b)) => Some(b.program.as_str()),
            _ => None,
        })
        .collect();
    let mut prompt = format!(
        "{}\n# Goal:\n{}\n\n# Action Space\n\n{}\n# Current Accessibility Tree:\n{}\n\n# Previous Actions\n{}\n",
        INSTRUCTIONS,
        goal.trim(),
        action_space_description(subset),
        tree.trim_end(),
        previous.join("\n"),
    );
    if let Some(err) = last_error(events) {
        prompt.push_str(&format!("\n# Error message from last action\n{}\n", err.trim_end()));
    }
    prompt.push('\n');
    prompt.push_str(EXAMPLES);
    prompt
}

/// Takes the last fenced block as the program; text before it is the
/// thought.
pub fn parse_browsing_response(text: &str) -> Result<AgentStepOutput, MalformedResponse> {
    let fences: Vec<usize> = text.match_indices("```").map(|(i, _)| i).collect();
    let [.., open, close] = fences[..] else {
        return Err(MalformedResponse::NoProgram);
    };
    let mut body = &text[open + 3..close];
    if let Some((first, rest)) = body.split_once('\n') {
        let first = first.trim();
        if !first.is_empty() && first.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            body = rest;
        }
    }
    let body = body.trim();
    if body.is_empty() {
        return Err(MalformedResponse::NoProgram);
    }
    let thought = Some(text[..open].trim()).filter(|t| !t.is_empty()).map(str::to_string);
    Ok(AgentStepOutput {
        thought,
        action: Action::browse(body),
    })
}

impl Agent for BrowsingAgent {
    fn config(&self) -> &AgentConfig {
        &self.config
    }

    fn step(&self, state: &SessionState, llm: &Meter<'_>) -> Result<AgentStepOutput, AgentError> {
        let events = state.events();
        if let Some(r) = last_browse_result(&events) {
            let done = match r.episode {
                EpisodeStatus::Answered => Some(r.message_to_user.clone().unwrap_or_default()),
                EpisodeStatus::Infeasible => {
                    Some(format!("infeasible: {}", r.message_to_user.clone().unwrap_or_default()))
                }
                EpisodeStatus::Running => None,
            };
            if let Some(summary) = done {
                return check_permitted(&self.config, AgentStepOutput::new(Action::finish(summary)));
            }
        }
        let request = CompletionRequest::new(vec![
            ChatMessage::new(Role::System, &self.config.system_message),
            ChatMessage::new(Role::User, browsing_prompt(&state.task, &events, &self.subset)),
        ])
        .with_agent(self.config.prompt_tag());
        let completion = llm.complete(&request)?;
        check_permitted(&self.config, parse_browsing_response(&completion.text)?)
    }
}
