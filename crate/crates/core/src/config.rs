//! Settings from `agentkernel.toml`, `AK_*` environment variables and
//! command-line flags, in increasing order of precedence.
//!
//! ```toml
//! [llm]
//! mode = "replay"
//! model = "gpt-4o"
//! recording = "recordings/session.jsonl"
//! endpoint = "https://api.example.com/v1"
//! prices = "prices.toml"
//!
//! [sandbox]
//! image = "ubuntu:22.04"
//! workspace = "workspace"
//! timeout_shell = 120
//!
//! [limits]
//! max_iterations = 30
//! max_cost = 10.0
//! max_delegation_depth = 2
//!
//! [paths]
//! agents = "agents.toml"
//! suites = "suites"
//! reports = "reports"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::event::SessionLimits;
use crate::llm::{LlmError, LlmMode, LlmSettings, PriceTable};

pub const CONFIG_FILE: &str = "agentkernel.toml";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub mode: Option<String>,
    pub model: Option<String>,
    pub recording: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub prices: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxSection {
    pub image: Option<String>,
    pub workspace: Option<PathBuf>,
    pub timeout_shell: Option<u64>,
    pub engine: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub agents: Option<PathBuf>,
    pub suites: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub sandbox: SandboxSection,
    pub limits: Option<SessionLimits>,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{name}: {message}")]
    Value { name: String, message: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl FileConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::File {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Reads `path`; a missing file is an empty config.
    pub fn load_or_default(path: &Path) -> Result<Self, ConfigError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text, &path.display().to_string()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(ConfigError::File {
                path: path.display().to_string(),
                message: e.to_string(),
            }),
        }
    }
}

/// Values given on the command line; `None` defers to env and file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<String>,
    pub model: Option<String>,
    pub recording: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub workspace: Option<PathBuf>,
    pub image: Option<String>,
    pub timeout_shell: Option<u64>,
    pub max_iterations: Option<u32>,
    pub max_cost: Option<f64>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub llm: LlmSettings,
    pub workspace: Option<PathBuf>,
    pub image: String,
    pub engine: String,
    pub timeout_shell: Option<u64>,
    pub limits: SessionLimits,
    pub agents: Option<PathBuf>,
    pub suites: PathBuf,
    pub reports: PathBuf,
}

impl Settings {
    /// Applies flag > env > file. `env` looks up a variable by name.
    pub fn resolve(flags: &Overrides, env: impl Fn(&str) -> Option<String>, file: &FileConfig, base: &Path) -> Result<Self, ConfigError> {
        let rel = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let pick_str = |flag: &Option<String>, var: &str, file: &Option<String>| {
            flag.clone().or_else(|| env(var)).or_else(|| file.clone())
        };
        let pick_path = |flag: &Option<PathBuf>, var: &str, file: &Option<PathBuf>| {
            flag.clone().or_else(|| env(var).map(PathBuf::from)).or_else(|| file.as_ref().map(rel))
        };
        let parse_num = |name: &str, v: String| {
            v.trim().parse::<u64>().map_err(|e| ConfigError::Value {
                name: name.to_string(),
                message: e.to_string(),
            })
        };

        let mode: LlmMode = pick_str(&flags.mode, "AK_LLM_MODE", &file.llm.mode)
            .unwrap_or_else(|| "replay".into())
            .parse()?;
        let prices = match &file.llm.prices {
            Some(p) => PriceTable::load(&rel(p))?,
            None => PriceTable::default(),
        };
        let mut llm = LlmSettings::new(mode);
        if let Some(m) = pick_str(&flags.model, "AK_LLM_MODEL", &file.llm.model) {
            llm.model = m;
        }
        llm.recording = pick_path(&flags.recording, "AK_RECORDING_PATH", &file.llm.recording);
        llm.script = pick_path(&flags.script, "AK_SCRIPT_PATH", &file.llm.script);
        llm.endpoint = pick_str(&flags.endpoint, "AK_LLM_ENDPOINT", &file.llm.endpoint);
        llm.api_key = env("AK_LLM_API_KEY");
        llm.prices = prices;

        let timeout_shell = match flags.timeout_shell {
            Some(t) => Some(t),
            None => match env("AK_TIMEOUT_SHELL") {
                Some(v) => Some(parse_num("AK_TIMEOUT_SHELL", v)?),
                None => file.sandbox.timeout_shell,
            },
        };
        let mut limits = file.limits.unwrap_or_default();
        if let Some(n) = flags.max_iterations {
            limits.max_iterations = n;
        }
        if let Some(c) = flags.max_cost {
            limits.max_cost = c;
        }
        limits.validate().map_err(|e| ConfigError::Value {
            name: "limits".into(),
            message: e.to_string(),
        })?;

        Ok(Settings {
            llm,
            workspace: pick_path(&flags.workspace, "AK_WORKSPACE", &file.sandbox.workspace),
            image: pick_str(&flags.image, "AK_SANDBOX_IMAGE", &file.sandbox.image).unwrap_or_else(|| "ubuntu:22.04".into()),
            engine: env("AK_CONTAINER_ENGINE").or_else(|| file.sandbox.engine.clone()).unwrap_or_else(|| "docker".into()),
            timeout_shell,
            limits,
            agents: file.paths.agents.as_ref().map(rel),
            suites: file.paths.suites.as_ref().map(rel).unwrap_or_else(|| base.join("suites")),
            reports: file.paths.reports.as_ref().map(rel).unwrap_or_else(|| base.join("reports")),
        })
    }
}
