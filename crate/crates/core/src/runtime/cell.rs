//! Persistent Python sessions for code cells.

use std::io::{BufRead, BufReader, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::CancelToken;
use crate::skills::{SkillSession, SKILL_SIGNATURES};

const DRIVER: &str = include_str!("cell_driver.py");

#[derive(Debug, thiserror::Error)]
pub enum CellError {
    #[error("failed to start python: {0}")]
    Spawn(std::io::Error),
    #[error("cell timed out after {0:?}; the python session was restarted and its definitions were lost")]
    Timeout(Duration),
    #[error("cell cancelled; the python session was restarted and its definitions were lost")]
    Cancelled,
    #[error("the python session crashed and was restarted; its definitions were lost")]
    Crashed,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum DriverMessage {
    Skill {
        name: String,
        args: serde_json::Value,
        cwd: String,
    },
    Done {
        output: String,
    },
}

struct Driver {
    child: Child,
    stdin: ChildStdin,
    lines: mpsc::Receiver<String>,
}

impl Driver {
    fn start(workspace: &Path, python: &str) -> Result<Self, CellError> {
        let skills: Vec<(&str, &str)> = SKILL_SIGNATURES.to_vec();
        let mut child = Command::new(python)
            .args(["-u", "-c", DRIVER])
            .current_dir(workspace)
            .env("AK_SKILLS", serde_json::to_string(&skills).expect("static data"))
            .env("PYTHONIOENCODING", "utf-8")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .process_group(0)
            .spawn()
            .map_err(CellError::Spawn)?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Driver { child, stdin, lines })
    }

    fn kill(&mut self) {
        // SAFETY: signalling the process group created for this driver.
        unsafe {
            libc::killpg(self.child.id() as libc::pid_t, libc::SIGKILL);
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Driver {
    fn drop(&mut self) {
        self.kill();
    }
}

/// A Python interpreter whose globals persist across cells. Skill
/// functions are predefined and call back into `skills`.
pub struct CellSession {
    workspace: PathBuf,
    python: String,
    driver: Option<Driver>,
    skills: Arc<Mutex<SkillSession>>,
}

impl std::fmt::Debug for CellSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CellSession")
            .field("workspace", &self.workspace)
            .field("running", &self.driver.is_some())
            .finish()
    }
}

impl CellSession {
    pub fn new(workspace: impl Into<PathBuf>, skills: Arc<Mutex<SkillSession>>) -> Self {
        CellSession {
            workspace: workspace.into(),
            python: "python3".into(),
            driver: None,
            skills,
        }
    }

    pub fn with_python(mut self, python: impl Into<String>) -> Self {
        self.python = python.into();
        self
    }

    fn driver(&mut self) -> Result<&mut Driver, CellError> {
        if self.driver.is_none() {
            self.driver = Some(Driver::start(&self.workspace, &self.python)?);
        }
        Ok(self.driver.as_mut().expect("just started"))
    }

    /// Discards the interpreter; the next cell starts a fresh one.
    pub fn restart(&mut self) {
        self.driver = None;
    }

    pub fn run(&mut self, source: &str, timeout: Duration, cancel: &CancelToken) -> Result<String, CellError> {
        let skills = self.skills.clone();
        let deadline = Instant::now() + timeout;
        let outcome = (|| {
            let driver = self.driver()?;
            let request = json!({ "code": source }).to_string();
            if writeln!(driver.stdin, "{request}").and_then(|_| driver.stdin.flush()).is_err() {
                return Err(CellError::Crashed);
            }
            loop {
                if cancel.is_cancelled() {
                    return Err(CellError::Cancelled);
                }
                let left = deadline.saturating_duration_since(Instant::now());
                if left.is_zero() {
                    return Err(CellError::Timeout(timeout));
                }
                let line = match driver.lines.recv_timeout(left.min(Duration::from_millis(20))) {
                    Ok(line) => line,
                    Err(mpsc::RecvTimeoutError::Timeout) => continue,
                    Err(mpsc::RecvTimeoutError::Disconnected) => return Err(CellError::Crashed),
                };
                match serde_json::from_str::<DriverMessage>(&line) {
                    Ok(DriverMessage::Done { output }) => return Ok(output),
                    Ok(DriverMessage::Skill { name, args, cwd }) => {
                        let text = {
                            let mut s = skills.lock().unwrap_or_else(|p| p.into_inner());
                            s.set_cwd(cwd);
                            match s.dispatch(&name, &args) {
                                Ok(t) => t,
                                Err(e) => e.0,
                            }
                        };
                        let reply = json!({ "text": text }).to_string();
                        if writeln!(driver.stdin, "{reply}").and_then(|_| driver.stdin.flush()).is_err() {
                            return Err(CellError::Crashed);
                        }
                    }
                    Err(_) => return Err(CellError::Crashed),
                }
            }
        })();
        match outcome {
            Ok(output) => Ok(output.strip_suffix('\n').unwrap_or(&output).to_string()),
            Err(e) => {
                self.restart();
                Err(e)
            }
        }
    }
}
