//! Concrete agents and the registry that names them.
//!
//! A registry file maps versioned agent names to a response grammar and a
//! system message file. An entry can instead name a `base` agent and layer
//! an overlay on it:
//!
//! ```toml
//! [agents."codeact@1"]
//! grammar = "codeact"
//! system_message = "prompts/codeact_system.md"
//! delegate_browsing = true
//! max_observation_chars = 2000
//!
//! [agents."chat@1"]
//! base = "codeact@1"
//! [agents."chat@1".overlay]
//! extra_system_text = "Only converse with the user."
//! allowed_action_kinds = ["message", "finish"]
//! ```

mod browsing;
mod codeact;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

pub use browsing::{browsing_prompt, parse_browsing_response, BrowsingAgent};
pub use codeact::CodeActAgent;

use crate::agent::{apply_micro_overlay, Agent, AgentConfig, ConfigError, MicroOverlay, ResponseGrammar};
use crate::event::Observation;

const BUILTIN_REGISTRY: &str = include_str!("../../agents.toml");

fn builtin_prompt(path: &Path) -> Option<&'static str> {
    match path.to_str()? {
        "prompts/codeact_system.md" => Some(include_str!("../../prompts/codeact_system.md")),
        "prompts/browsing_system.md" => Some(include_str!("../../prompts/browsing_system.md")),
        _ => None,
    }
}

/// Text an agent sees for an observation.
pub fn observation_text(obs: &Observation) -> String {
    match obs {
        Observation::ShellResult(r) => {
            let status = if r.timed_out {
                format!("[Command timed out and was stopped; exit code {}, cwd {}]", r.exit_code, r.cwd)
            } else {
                format!("[Command finished with exit code {}, cwd {}]", r.exit_code, r.cwd)
            };
            if r.output.is_empty() {
                status
            } else {
                format!("{}\n{status}", r.output)
            }
        }
        Observation::CellResult(r) if r.output.is_empty() => "[Code executed with no output]".into(),
        Observation::CellResult(r) => r.output.clone(),
        Observation::BrowseResult(r) => {
            let mut out = format!("URL: {}\n", r.url);
            if let Some(e) = &r.error {
                out.push_str(&format!("Error: {e}\n"));
            }
            if let Some(m) = &r.message_to_user {
                out.push_str(&format!("Message to user: {m}\n"));
            }
            out.push_str(&r.observation);
            out
        }
        Observation::UserMessage(m) => m.content.clone(),
        Observation::DelegateResult(d) => format!("{} stopped ({}): {}", d.agent, d.termination, d.summary),
        Observation::Error(e) => format!("ERROR ({}): {}", e.category.as_str(), e.message),
    }
}

/// Keeps the first and last `max / 2` characters of long text.
pub fn truncate_middle(text: &str, max: usize) -> String {
    let total = text.chars().count();
    if total <= max {
        return text.to_string();
    }
    let half = max / 2;
    let head: String = text.chars().take(half).collect();
    let tail: String = text.chars().skip(total - half).collect();
    format!("{head}\n[... {} characters omitted ...]\n{tail}", total - 2 * half)
}

pub fn build_agent(config: AgentConfig) -> Arc<dyn Agent> {
    match config.grammar {
        ResponseGrammar::Codeact => Arc::new(CodeActAgent::new(config)),
        ResponseGrammar::Browsing => Arc::new(BrowsingAgent::new(config)),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("registry: {0}")]
    Parse(String),
    #[error("agent {agent}: {message}")]
    Entry { agent: String, message: String },
    #[error("agent {agent}: {source}")]
    Config { agent: String, source: ConfigError },
}

#[derive(Deserialize)]
struct RegistryFile {
    #[serde(default)]
    agents: BTreeMap<String, Entry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    grammar: Option<ResponseGrammar>,
    system_message: Option<PathBuf>,
    base: Option<String>,
    overlay: Option<MicroOverlay>,
    delegate_browsing: Option<bool>,
    browsing_agent: Option<String>,
    max_observation_chars: Option<usize>,
}

/// Agents by name. Read-only once built, so sessions share it freely.
#[derive(Clone, Default)]
pub struct AgentRegistry {
    agents: BTreeMap<String, Arc<dyn Agent>>,
}

impl std::fmt::Debug for AgentRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.agents.keys()).finish()
    }
}

impl AgentRegistry {
    /// `codeact@1`, `browsing@1` and `chat@1` with the shipped prompts.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_REGISTRY, |p| {
            builtin_prompt(p).map(str::to_string).ok_or_else(|| format!("no built-in prompt {}", p.display()))
        })
        .expect("built-in registry is valid")
    }

    /// Reads a registry file; prompt paths are relative to it.
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|e| RegistryError::Parse(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_toml(&text, |p| std::fs::read_to_string(dir.join(p)).map_err(|e| format!("{}: {e}", p.display())))
    }

    pub fn from_toml(text: &str, read: impl Fn(&Path) -> Result<String, String>) -> Result<Self, RegistryError> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        let mut configs: BTreeMap<String, AgentConfig> = BTreeMap::new();
        let mut pending: Vec<&String> = file.agents.keys().collect();
        while !pending.is_empty() {
            let before = pending.len();
            let mut still = Vec::new();
            for name in pending {
                let entry = &file.agents[name];
                let bad = |message: String| RegistryError::Entry { agent: name.clone(), message };
                let cfg_err = |source| RegistryError::Config { agent: name.clone(), source };
                let mut config = match (&entry.base, entry.grammar, &entry.system_message) {
                    (Some(base), None, None) => match configs.get(base) {
                        Some(b) => AgentConfig { name: name.clone(), ..b.clone() },
                        None if file.agents.contains_key(base) => {
                            still.push(name);
                            continue;
                        }
                        None => return Err(bad(format!("unknown base agent {base}"))),
                    },
                    (None, Some(grammar), Some(path)) => {
                        let text = read(path).map_err(bad)?;
                        AgentConfig::new(name.clone(), grammar, text.trim_end()).map_err(cfg_err)?
                    }
                    _ => return Err(bad("give either base, or grammar and system_message".into())),
                };
                if let Some(v) = entry.delegate_browsing {
                    config.delegate_browsing = v;
                }
                if let Some(v) = &entry.browsing_agent {
                    config.browsing_agent = v.clone();
                }
                if let Some(v) = entry.max_observation_chars {
                    config.max_observation_chars = v;
                }
                if let Some(overlay) = &entry.overlay {
                    config = apply_micro_overlay(&config, overlay).map_err(cfg_err)?;
                }
                configs.insert(name.clone(), config);
            }
            if still.len() == before {
                return Err(RegistryError::Parse(format!("base agents form a cycle: {still:?}")));
            }
            pending = still;
        }
        let mut registry = AgentRegistry::default();
        for (_, config) in configs {
            registry.insert(build_agent(config));
        }
        Ok(registry)
    }

    pub fn insert(&mut self, agent: Arc<dyn Agent>) {
        self.agents.insert(agent.config().name.clone(), agent);
    }

    /// Looks up `name` exactly, or as the unversioned prefix of a single
    /// `name@N` entry.
    pub fn get(&self, name: &str) -> Option<Arc<dyn Agent>> {
        if let Some(a) = self.agents.get(name) {
            return Some(a.clone());
        }
        let prefix = format!("{name}@");
        let mut matches = self.agents.iter().filter(|(k, _)| k.starts_with(&prefix));
        match (matches.next(), matches.next()) {
            (Some((_, a)), None) => Some(a.clone()),
            _ => None,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.agents.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{ActionKind, ShellResult};

    #[test]
    fn builtin_agents() {
        let r = AgentRegistry::builtin();
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["browsing@1", "chat@1", "codeact@1"]);
        assert_eq!(r.get("codeact").unwrap().config().name, "codeact@1");
        assert!(r.get("nosuchagent").is_none());
        let chat = r.get("chat@1").unwrap();
        assert!(chat.config().permits(ActionKind::Message));
        assert!(!chat.config().permits(ActionKind::ShellCommand));
        assert!(chat.config().system_message.ends_with("Do not run commands or browse."));
    }

    #[test]
    fn prompts_are_benchmark_neutral() {
        let deny = ["webarena", "miniwob", "swe-bench", "swebench", "humanevalfix", "gaia", "gpqa", "biocoder", "bird", "ml-bench", "toolqa", "agentbench", "mint", "gorilla", "eda"];
        let r = AgentRegistry::builtin();
        for name in r.names() {
            let a = r.get(name).unwrap();
            let text = a.config().system_message.to_lowercase();
            for word in deny {
                assert!(!text.split(|c: char| !c.is_alphanumeric() && c != '-').any(|w| w == word), "{name} mentions {word}");
            }
        }
    }

    #[test]
    fn base_cycle_and_unknown() {
        let ok = |_: &Path| Ok("sys".to_string());
        let cycle = "[agents.a]\nbase = \"b\"\n[agents.b]\nbase = \"a\"\n";
        assert!(matches!(AgentRegistry::from_toml(cycle, ok), Err(RegistryError::Parse(_))));
        let unknown = "[agents.a]\nbase = \"zz\"\n";
        assert!(matches!(AgentRegistry::from_toml(unknown, ok), Err(RegistryError::Entry { .. })));
    }

    #[test]
    fn truncation_keeps_both_ends() {
        let text = "a".repeat(1500) + &"b".repeat(1500);
        let t = truncate_middle(&text, 2000);
        assert!(t.starts_with(&"a".repeat(1000)));
        assert!(t.ends_with(&"b".repeat(1000)));
        assert!(t.contains("[... 1000 characters omitted ...]"));
        assert_eq!(truncate_middle("short", 2000), "short");
    }

    #[test]
    fn shell_observation_text() {
        let obs = Observation::ShellResult(ShellResult { exit_code: 1, output: String::new(), cwd: "/workspace".into(), timed_out: false });
        assert_eq!(observation_text(&obs), "[Command finished with exit code 1, cwd /workspace]");
    }
}
