//! Declarative tasks, checkers and suite reports.
//!
//! A suite is a directory of task files. Paths inside a task file are
//! relative to the file:
//!
//! ```toml
//! id = "bad_txt_typo"
//! instruction = "Fix the typos in bad.txt."
//! agent = "codeact@1"
//! recording = "data/bad_txt_typo/recording.jsonl"
//! script = "data/bad_txt_typo/script.toml"
//!
//! [workspace]
//! dir = "data/bad_txt_typo/seed"
//!
//! [limits]
//! max_iterations = 10
//! max_cost = 1.0
//! max_delegation_depth = 1
//!
//! [checker]
//! kind = "gold_files"
//! dir = "data/bad_txt_typo/gold"
//! ```
//!
//! Checkers are `gold_files` (`dir`, optional `strict`), `message_exact`
//! (`text`) and `predicate` (`name` plus `path` and/or `text`).

mod gold;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use gold::{compare_gold, compare_trees, read_tree, GoldComparison, GoldDiff};
pub use report::{summarize, Report, Summary};

use crate::agents::AgentRegistry;
use crate::browse::{builtin_site, load_site_dir};
use crate::controller::{final_message, Controller, ControllerError, SessionHandle, SessionSpec};
use crate::event::{SessionLimits, SessionState, TerminationReason};
use crate::llm::{
    Gateway, LlmError, LlmSettings, LiveProvider, PriceTable, Provider, RecordingHeader, RecordingWriter, ReplayProvider,
    ScriptedProvider, PLATFORM_VERSION,
};
use crate::runtime::{LocalRuntime, RuntimeConfig};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {message}")]
    Spec { path: String, message: String },
    #[error("task {task}: recording {path} not found; replay never falls back to a live model")]
    MissingRecording { task: String, path: String },
    #[error("task {0}: no script file")]
    MissingScript(String),
    #[error("duplicate task id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateName {
    FileExists,
    FileContains,
    MessageContains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checker {
    GoldFiles {
        dir: PathBuf,
        #[serde(default)]
        strict: bool,
    },
    MessageExact {
        text: String,
    },
    Predicate {
        name: PredicateName,
        #[serde(default)]
        path: Option<String>,
        #[serde(default)]
        text: Option<String>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSeed {
    /// Directory copied into the fresh workspace.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Extra files, path to content.
    #[serde(default)]
    pub files: BTreeMap<String, String>,
}

fn default_agent() -> String {
    "codeact@1".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    #[serde(default = "default_agent")]
    pub agent: String,
    #[serde(default)]
    pub recording: Option<PathBuf>,
    /// Scripted responses used to regenerate the recording offline.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub workspace: WorkspaceSeed,
    /// Page fixture directory; the built-in pages when absent.
    #[serde(default)]
    pub sites: Option<PathBuf>,
    #[serde(default)]
    pub start_url: Option<String>,
    #[serde(default)]
    pub limits: Option<SessionLimits>,
    pub checker: Checker,
    /// Directory the relative paths above resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl TaskSpec {
    pub fn parse(text: &str, base_dir: &Path, origin: &str) -> Result<Self, EvalError> {
        let bad = |message: String| EvalError::Spec { path: origin.to_string(), message };
        let mut spec: TaskSpec = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        spec.base_dir = base_dir.to_path_buf();
        spec.validate().map_err(bad)?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), &path.display().to_string())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn limits(&self) -> SessionLimits {
        self.limits.unwrap_or_default()
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(format!("task id {:?} must be nonempty [A-Za-z0-9_-]", self.id));
        }
        if let Some(l) = &self.limits {
            l.validate().map_err(|e| e.to_string())?;
        }
        let must_exist = |p: &Path, what: &str| {
            if self.resolve(p).exists() {
                Ok(())
            } else {
                Err(format!("{what} {} does not exist", p.display()))
            }
        };
        if let Some(d) = &self.workspace.dir {
            must_exist(d, "workspace dir")?;
        }
        if let Some(d) = &self.sites {
            must_exist(d, "sites dir")?;
        }
        match &self.checker {
            Checker::GoldFiles { dir, .. } => must_exist(dir, "gold dir")?,
            Checker::MessageExact { .. } => {}
            Checker::Predicate { name, path, text } => {
                let ok = match name {
                    PredicateName::FileExists => path.is_some(),
                    PredicateName::FileContains => path.is_some() && text.is_some(),
                    PredicateName::MessageContains => text.is_some(),
                };
                if !ok {
                    return Err(format!("predicate {name:?} is missing its path or text"));
                }
            }
        }
        Ok(())
    }

    fn seed(&self, workspace: &Path) -> Result<(), EvalError> {
        let io = |e: std::io::Error| EvalError::Io(format!("seeding {}: {e}", self.id));
        if let Some(dir) = &self.workspace.dir {
            for (rel, content) in read_tree(&self.resolve(dir)).map_err(io)? {
                let target = workspace.join(&rel);
                if let Some(parent) = target.parent() {
                    std::fs::create_dir_all(parent).map_err(io)?;
                }
                std::fs::write(target, content).map_err(io)?;
            }
        }
        for (rel, content) in &self.workspace.files {
            let target = workspace.join(rel);
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
            std::fs::write(target, content).map_err(io)?;
        }
        Ok(())
    }
}

/// Loads every `*.toml` task in `dir`, sorted by id.
pub fn load_suite(dir: &Path) -> Result<Vec<TaskSpec>, EvalError> {
    let entries = std::fs::read_dir(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    let mut specs = Vec::new();
    for p in paths {
        let spec = TaskSpec::load(&p)?;
        if specs.iter().any(|s: &TaskSpec| s.id == spec.id) {
            return Err(EvalError::DuplicateId(spec.id));
        }
        specs.push(spec);
    }
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub id: String,
    pub success: bool,
    pub termination: Option<TerminationReason>,
    pub steps: u32,
    pub cost: f64,
    pub duration_ms: u64,
    #[serde(default)]
    pub final_message: Option<String>,
    /// Why the checker failed, empty on success.
    #[serde(default)]
    pub detail: String,
}

/// Where model responses come from.
#[derive(Debug, Clone)]
pub enum ResponseSource {
    /// The task's recording. Missing recordings are an error.
    Replay,
    /// The task's script file.
    Script,
    Live(LlmSettings),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub source: ResponseSource,
    /// Write every call to the task's recording path.
    pub record: bool,
    pub agent: Option<String>,
    pub prices: PriceTable,
    pub registry: Arc<AgentRegistry>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            source: ResponseSource::Replay,
            record: false,
            agent: None,
            prices: PriceTable::default(),
            registry: Arc::new(AgentRegistry::builtin()),
        }
    }
}

/// A finished task with its full session.
#[derive(Debug)]
pub struct TaskRun {
    pub result: TaskResult,
    pub state: SessionState,
}

pub fn gateway_for(spec: &TaskSpec, opts: &RunOptions) -> Result<Gateway, EvalError> {
    let model = match &opts.source {
        ResponseSource::Live(s) => s.model.clone(),
        _ => "recorded".to_string(),
    };
    let provider: Arc<dyn Provider> = match &opts.source {
        ResponseSource::Replay => {
            let path = spec.recording.as_ref().map(|p| spec.resolve(p));
            match path {
                Some(p) if p.is_file() => Arc::new(ReplayProvider::load(&p)?),
                other => {
                    return Err(EvalError::MissingRecording {
                        task: spec.id.clone(),
                        path: other.map(|p| p.display().to_string()).unwrap_or_else(|| "(none)".into()),
                    })
                }
            }
        }
        ResponseSource::Script => {
            let path = spec.script.as_ref().ok_or_else(|| EvalError::MissingScript(spec.id.clone()))?;
            Arc::new(ScriptedProvider::load(&spec.resolve(path))?)
        }
        ResponseSource::Live(s) => {
            let endpoint = s.endpoint.clone().ok_or_else(|| LlmError::Config("live mode needs AK_LLM_ENDPOINT".into()))?;
            Arc::new(LiveProvider::new(endpoint, s.api_key.clone(), s.model.clone()))
        }
    };
    let mut gateway = Gateway::new(provider, model.clone()).with_prices(opts.prices.clone());
    if opts.record {
        let path = spec.recording.as_ref().ok_or_else(|| EvalError::Spec {
            path: spec.id.clone(),
            message: "record mode needs a recording path".into(),
        })?;
        let header = RecordingHeader { model, platform_version: PLATFORM_VERSION.into() };
        gateway = gateway.recording_to(Arc::new(RecordingWriter::create(&spec.resolve(path), header)?));
    }
    Ok(gateway)
}

pub fn run_task(spec: &TaskSpec, opts: &RunOptions) -> Result<TaskRun, EvalError> {
    let gateway = gateway_for(spec, opts)?;
    run_task_with(spec, opts, gateway)
}

/// Runs `spec` in a fresh workspace with the given gateway and applies the
/// checker.
pub fn run_task_with(spec: &TaskSpec, opts: &RunOptions, gateway: Gateway) -> Result<TaskRun, EvalError> {
    let workspace = tempfile::Builder::new()
        .prefix("ak-eval-")
        .tempdir()
        .map_err(|e| EvalError::Io(e.to_string()))?;
    run_task_in(spec, opts, gateway, workspace.path())
}

/// Like [`run_task_with`] in a caller-owned, empty `workspace` that is left
/// in place afterwards.
pub fn run_task_in(spec: &TaskSpec, opts: &RunOptions, gateway: Gateway, workspace: &Path) -> Result<TaskRun, EvalError> {
    let started = Instant::now();
    spec.seed(workspace)?;
    let mut config = RuntimeConfig::new(workspace);
    config.site = Arc::new(match &spec.sites {
        Some(dir) => load_site_dir(&spec.resolve(dir)).map_err(|e| EvalError::Io(e.to_string()))?,
        None => builtin_site(),
    });
    config.start_url = spec.start_url.clone();
    let runtime = LocalRuntime::new(config).map_err(|e| EvalError::Io(e.to_string()))?;
    let controller = Controller::new(opts.registry.clone(), Arc::new(runtime), gateway);
    let agent = opts.agent.clone().unwrap_or_else(|| spec.agent.clone());
    let state = controller.run_session(
        SessionSpec::new(&spec.id, &spec.instruction, agent, spec.limits()),
        &SessionHandle::new(&spec.id),
    )?;

    let message = final_message(&state);
    let (passed, detail) = check(spec, workspace, message.as_deref())?;
    let termination = state.termination();
    let terminated_cleanly = matches!(termination, Some(TerminationReason::Finished | TerminationReason::AwaitingUser));
    let detail = if passed && !terminated_cleanly {
        format!("session ended with {}", termination.map(|t| t.as_str()).unwrap_or("no termination"))
    } else {
        detail
    };
    let result = TaskResult {
        id: spec.id.clone(),
        success: passed && terminated_cleanly,
        termination,
        steps: state.iteration(),
        cost: state.accumulated_cost(),
        duration_ms: started.elapsed().as_millis() as u64,
        final_message: message,
        detail,
    };
    tracing::info!(task = %spec.id, success = result.success, "task finished");
    Ok(TaskRun { result, state })
}

fn check(spec: &TaskSpec, workspace: &Path, message: Option<&str>) -> Result<(bool, String), EvalError> {
    let got = || format!("{:?}", message.unwrap_or(""));
    Ok(match &spec.checker {
        Checker::GoldFiles { dir, strict } => {
            let cmp = compare_gold(workspace, &spec.resolve(dir), *strict).map_err(|e| EvalError::Io(e.to_string()))?;
            let detail = cmp.diffs.iter().filter(|d| *strict || !matches!(d, GoldDiff::Extra { .. })).map(|d| d.to_string()).collect::<Vec<_>>().join("; ");
            (cmp.matched, detail)
        }
        Checker::MessageExact { text } => {
            let ok = message.map(str::trim) == Some(text.as_str());
            (ok, if ok { String::new() } else { format!("expected message {text:?}, got {}", got()) })
        }
        Checker::Predicate { name, path, text } => {
            let path = path.as_deref().map(|p| workspace.join(p));
            let ok = match name {
                PredicateName::FileExists => path.as_ref().is_some_and(|p| p.exists()),
                PredicateName::FileContains => path
                    .as_ref()
                    .and_then(|p| std::fs::read_to_string(p).ok())
                    .is_some_and(|c| c.contains(text.as_deref().unwrap_or_default())),
                PredicateName::MessageContains => message.is_some_and(|m| m.contains(text.as_deref().unwrap_or_default())),
            };
            (ok, if ok { String::new() } else { format!("predicate {name:?} failed; final message {}", got()) })
        }
    })
}

/// Runs every task of a suite in order.
pub fn run_suite(name: &str, specs: &[TaskSpec], opts: &RunOptions) -> Result<(Report, Vec<TaskRun>), EvalError> {
    let mut runs = Vec::new();
    for spec in specs {
        runs.push(run_task(spec, opts)?);
    }
    let report = summarize(name, runs.iter().map(|r| r.result.clone()).collect());
    Ok((report, runs))
}
