//! Executes actions inside a sandbox and turns the results into observations.
//!
//! [`LocalRuntime`] runs everything as child processes of the current
//! process, confined to a workspace directory. Each session gets its own
//! shell, Python interpreter and simulated browser; sessions never share
//! working directories or variables. Actions within one session run one at
//! a time.

mod cell;
pub mod container;
pub mod images;
mod shell;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub use cell::{CellError, CellSession};
pub use shell::{ShellError, ShellSession, TIMEOUT_EXIT_CODE};

use crate::browse::{
    parse_action_program, render_observation, run_program, ActionSubset, BrowserState, Site,
};
use crate::event::{Action, ActionKind, BrowseResult, CellResult, ErrorCategory, Observation};
use crate::skills::SkillSession;

pub const WORKSPACE_MOUNT: &str = "/workspace";
pub const DEFAULT_CELL_TIMEOUT: Duration = Duration::from_secs(60);

/// Shared flag used to abort an in-flight action.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("{} actions are handled by the controller, not the runtime", .0.as_str())]
    NotExecutable(ActionKind),
    #[error("runtime unavailable: {0}")]
    Unavailable(String),
}

pub trait Runtime: Send + Sync {
    /// Runs one action for `session`. Failures inside the sandbox come
    /// back as error observations; `Err` means the action never ran.
    fn execute(&self, session: &str, action: &Action, cancel: &CancelToken) -> Result<Observation, RuntimeError>;

    fn alive(&self) -> bool {
        true
    }

    /// Releases the session's shell, interpreter and browser.
    fn close_session(&self, _session: &str) {}
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub workspace: PathBuf,
    pub cell_timeout: Duration,
    pub site: Arc<Site>,
    /// Page loaded in a session's first tab.
    pub start_url: Option<String>,
    pub browse_subset: ActionSubset,
    pub python: String,
    /// Upper bound on any shell command's own timeout.
    pub max_shell_timeout: Option<Duration>,
}

impl RuntimeConfig {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        RuntimeConfig {
            workspace: workspace.into(),
            cell_timeout: DEFAULT_CELL_TIMEOUT,
            site: Arc::new(crate::browse::builtin_site()),
            start_url: None,
            browse_subset: ActionSubset::all(),
            python: "python3".into(),
            max_shell_timeout: None,
        }
    }
}

struct SessionWorker {
    shell: ShellSession,
    cell: CellSession,
    browser: BrowserState,
}

pub struct LocalRuntime {
    config: RuntimeConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionWorker>>>>,
}

impl std::fmt::Debug for LocalRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalRuntime").field("config", &self.config).finish()
    }
}

impl LocalRuntime {
    pub fn new(config: RuntimeConfig) -> Result<Self, RuntimeError> {
        if !config.workspace.is_dir() {
            return Err(RuntimeError::Unavailable(format!(
                "workspace {} is not a directory",
                config.workspace.display()
            )));
        }
        Ok(LocalRuntime {
            config,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    fn worker(&self, session: &str) -> Result<Arc<Mutex<SessionWorker>>, RuntimeError> {
        let mut sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(w) = sessions.get(session) {
            return Ok(w.clone());
        }
        let ws = &self.config.workspace;
        let shell = ShellSession::new(ws).map_err(|e| RuntimeError::Unavailable(e.to_string()))?;
        let skills = Arc::new(Mutex::new(SkillSession::new(ws)));
        let cell = CellSession::new(ws, skills).with_python(self.config.python.clone());
        let site = self.config.site.clone();
        let browser = match &self.config.start_url {
            Some(url) => BrowserState::open(site, url).map_err(|e| RuntimeError::Unavailable(e.to_string()))?,
            None => BrowserState::new(site),
        };
        let worker = Arc::new(Mutex::new(SessionWorker { shell, cell, browser }));
        sessions.insert(session.to_string(), worker.clone());
        Ok(worker)
    }

    /// Shows paths inside the workspace as if it were mounted at
    /// [`WORKSPACE_MOUNT`], so observations do not depend on where the
    /// workspace lives on the host.
    fn virtual_path(&self, path: &str) -> String {
        let root = self.config.workspace.canonicalize().unwrap_or_else(|_| self.config.workspace.clone());
        match std::path::Path::new(path).strip_prefix(&root) {
            Ok(rest) if rest.as_os_str().is_empty() => WORKSPACE_MOUNT.to_string(),
            Ok(rest) => format!("{WORKSPACE_MOUNT}/{}", rest.display()),
            Err(_) => path.to_string(),
        }
    }

    /// Current browser state of `session`, if it has one.
    pub fn browser_state(&self, session: &str) -> Option<BrowserState> {
        let sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let worker = sessions.get(session)?.clone();
        drop(sessions);
        let w = worker.lock().unwrap_or_else(|p| p.into_inner());
        Some(w.browser.clone())
    }
}

impl Runtime for LocalRuntime {
    fn execute(&self, session: &str, action: &Action, cancel: &CancelToken) -> Result<Observation, RuntimeError> {
        match action {
            Action::Message(_) | Action::Delegate(_) | Action::Finish(_) => {
                return Err(RuntimeError::NotExecutable(action.kind()))
            }
            _ => {}
        }
        let worker = self.worker(session)?;
        let mut w = worker.lock().unwrap_or_else(|p| p.into_inner());
        let obs = match action {
            Action::ShellCommand(cmd) => {
                let mut timeout = Duration::from_secs(cmd.timeout_s.max(1));
                if let Some(cap) = self.config.max_shell_timeout {
                    timeout = timeout.min(cap);
                }
                match w.shell.run(&cmd.command, timeout, cancel) {
                    Ok(mut result) => {
                        result.cwd = self.virtual_path(&result.cwd);
                        Observation::ShellResult(result)
                    }
                    Err(ShellError::Cancelled { partial_output }) => Observation::error(
                        ErrorCategory::Cancelled,
                        if partial_output.is_empty() {
                            "command interrupted".to_string()
                        } else {
                            format!("command interrupted; output so far:\n{partial_output}")
                        },
                    ),
                    Err(e) => Observation::error(ErrorCategory::Runtime, e.to_string()),
                }
            }
            Action::CodeCell(cell) => match w.cell.run(&cell.source, self.config.cell_timeout, cancel) {
                Ok(output) => Observation::CellResult(CellResult { output }),
                Err(e @ CellError::Timeout(_)) => Observation::error(ErrorCategory::Timeout, e.to_string()),
                Err(e @ CellError::Cancelled) => Observation::error(ErrorCategory::Cancelled, e.to_string()),
                Err(e @ CellError::Crashed) => Observation::error(ErrorCategory::CellRestarted, e.to_string()),
                Err(e @ CellError::Spawn(_)) => Observation::error(ErrorCategory::Runtime, e.to_string()),
            },
            Action::Browse(b) => browse(&mut w.browser, &b.program, &self.config.browse_subset),
            _ => unreachable!("controller-level actions returned above"),
        };
        Ok(obs)
    }

    fn close_session(&self, session: &str) {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).remove(session);
    }
}

/// Runs a browsing program against `state`, replacing it with the result.
pub fn browse(state: &mut BrowserState, program: &str, subset: &ActionSubset) -> Observation {
    let program = match parse_action_program(program) {
        Ok(p) => p,
        Err(e) => return Observation::error(ErrorCategory::BrowseParse, e.to_string()),
    };
    let outcome = run_program(state, &program, subset);
    *state = outcome.state;
    Observation::BrowseResult(BrowseResult {
        observation: render_observation(state),
        url: state.url().to_string(),
        error: outcome.error,
        message_to_user: state.message_to_user.clone(),
        episode: state.episode,
    })
}
