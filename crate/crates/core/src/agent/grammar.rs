//! Tag grammar for CodeAct responses.
//!
//! | block                                | action        |
//! |--------------------------------------|---------------|
//! | `<execute_bash>cmd</execute_bash>`   | shell command |
//! | `<execute_ipython>src</execute_ipython>` | code cell |
//! | `<execute_browse>goal</execute_browse>` | browse     |
//! | `<finish>summary</finish>`           | finish        |
//! | no block                             | message       |
//!
//! Prose before the first block is the thought. Several blocks of the same
//! kind are joined with newlines; blocks of different kinds are rejected.

use super::AgentStepOutput;
use crate::event::Action;

pub const CODEACT_TAGS: [&str; 4] = ["execute_bash", "execute_ipython", "execute_browse", "finish"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MalformedResponse {
    #[error("the response was empty; reply with a message or exactly one kind of block")]
    Empty,
    #[error("<{0}> is never closed; end the block with </{0}>")]
    Unterminated(&'static str),
    #[error("the response mixes <{0}> and <{1}> blocks; use one kind of block per reply")]
    MixedBlocks(&'static str, &'static str),
    #[error("the <{0}> block is empty")]
    EmptyBlock(&'static str),
    #[error("no action found; put the action in a ``` block at the end of the reply")]
    NoProgram,
}

fn next_block(text: &str, from: usize) -> Option<(usize, &'static str)> {
    CODEACT_TAGS
        .iter()
        .filter_map(|tag| text[from..].find(&format!("<{tag}>")).map(|i| (from + i, *tag)))
        .min_by_key(|(i, _)| *i)
}

pub fn parse_codeact_response(text: &str) -> Result<AgentStepOutput, MalformedResponse> {
    let mut blocks: Vec<(&'static str, &str)> = Vec::new();
    let mut first_open = None;
    let mut pos = 0;
    while let Some((open, tag)) = next_block(text, pos) {
        first_open.get_or_insert(open);
        let body_start = open + tag.len() + 2;
        let close_tag = format!("</{tag}>");
        let Some(len) = text[body_start..].find(&close_tag) else {
            return Err(MalformedResponse::Unterminated(tag));
        };
        blocks.push((tag, text[body_start..body_start + len].trim()));
        pos = body_start + len + close_tag.len();
    }

    let Some(first_open) = first_open else {
        let content = text.trim();
        if content.is_empty() {
            return Err(MalformedResponse::Empty);
        }
        return Ok(AgentStepOutput {
            thought: None,
            action: Action::message(content),
        });
    };

    let tag = blocks[0].0;
    if let Some((other, _)) = blocks.iter().find(|(t, _)| *t != tag) {
        return Err(MalformedResponse::MixedBlocks(tag, other));
    }
    let body = blocks.iter().map(|(_, b)| *b).filter(|b| !b.is_empty()).collect::<Vec<_>>().join("\n");
    let thought = Some(text[..first_open].trim()).filter(|t| !t.is_empty()).map(str::to_string);
    let action = match tag {
        "finish" => Action::finish(body),
        _ if body.is_empty() => return Err(MalformedResponse::EmptyBlock(tag)),
        "execute_bash" => Action::shell(body),
        "execute_ipython" => Action::code_cell(body),
        _ => Action::browse(body),
    };
    Ok(AgentStepOutput { thought, action })
}

fn block(tag: &str, body: &str) -> String {
    format!("<{tag}>\n{body}\n</{tag}>")
}

/// Prints an action the way a model would have written it. Delegations
/// print as the browse block that produced them.
pub fn render_codeact_response(output: &AgentStepOutput) -> String {
    let body = match &output.action {
        Action::Message(m) => return m.content.clone(),
        Action::ShellCommand(c) => block("execute_bash", &c.command),
        Action::CodeCell(c) => block("execute_ipython", &c.source),
        Action::Browse(b) => block("execute_browse", &b.program),
        Action::Delegate(d) => block("execute_browse", &d.subtask),
        Action::Finish(f) if f.summary.is_empty() => "<finish></finish>".to_string(),
        Action::Finish(f) => block("finish", &f.summary),
    };
    match &output.thought {
        Some(t) => format!("{t}\n{body}"),
        None => body,
    }
}
