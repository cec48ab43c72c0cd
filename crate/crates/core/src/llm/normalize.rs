//! Prompt canonicalization for replay lookups.
//!
//! Two prompts that differ only in volatile details (a timestamp line, a
//! temporary directory name, a session UUID) normalize to the same text and
//! therefore the same digest.

use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use super::{ChatMessage, CompletionRequest};

/// Lines matching a `drop` pattern are removed; matches of a `mask` pattern
/// are replaced by its placeholder.
#[derive(Debug, Clone)]
pub struct NormalizationRules {
    pub drop: Vec<Regex>,
    pub mask: Vec<(Regex, String)>,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        NormalizationRules {
            drop: vec![Regex::new(r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}").expect("valid regex")],
            mask: vec![
                (
                    Regex::new(r"/var/folders/[^/\s]+/[^/\s]+/T/[^/\s'\x22]+").expect("valid regex"),
                    "<tmp>".into(),
                ),
                (Regex::new(r"/tmp/[^/\s'\x22]+").expect("valid regex"), "<tmp>".into()),
                (
                    Regex::new(r"(?i)\b[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}\b")
                        .expect("valid regex"),
                    "<uuid>".into(),
                ),
            ],
        }
    }
}

impl NormalizationRules {
    pub fn shared() -> &'static NormalizationRules {
        static RULES: OnceLock<NormalizationRules> = OnceLock::new();
        RULES.get_or_init(NormalizationRules::default)
    }

    /// Adds a drop pattern, e.g. one naming a suite's workspace root.
    pub fn drop_lines_matching(mut self, pattern: &str) -> Result<Self, regex::Error> {
        self.drop.push(Regex::new(pattern)?);
        Ok(self)
    }

    pub fn mask_matches(mut self, pattern: &str, placeholder: &str) -> Result<Self, regex::Error> {
        self.mask.push((Regex::new(pattern)?, placeholder.to_string()));
        Ok(self)
    }
}

fn join(tag: Option<&str>, messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    if let Some(tag) = tag {
        out.push_str("<|agent|>");
        out.push_str(tag);
        out.push('\n');
    }
    for m in messages {
        out.push_str("<|");
        out.push_str(m.role.as_str());
        out.push_str("|>\n");
        out.push_str(&m.content);
        out.push('\n');
    }
    out
}

/// The request's messages joined with role separators, unmodified.
pub fn raw_prompt(req: &CompletionRequest) -> String {
    join(req.agent.as_deref(), &req.messages)
}

pub fn normalize_prompt(req: &CompletionRequest) -> String {
    normalize_prompt_with(req, NormalizationRules::shared())
}

pub fn normalize_prompt_with(req: &CompletionRequest, rules: &NormalizationRules) -> String {
    normalize_text(&raw_prompt(req), rules)
}

pub fn normalize_text(raw: &str, rules: &NormalizationRules) -> String {
    let mut out = String::with_capacity(raw.len());
    for line in raw.lines() {
        if rules.drop.iter().any(|r| r.is_match(line)) {
            continue;
        }
        let mut line = line.split_whitespace().collect::<Vec<_>>().join(" ");
        for (re, placeholder) in &rules.mask {
            if re.is_match(&line) {
                line = re.replace_all(&line, placeholder.as_str()).into_owned();
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn prompt_digest(normalized: &str) -> String {
    hex::encode(Sha256::digest(normalized.as_bytes()))
}
