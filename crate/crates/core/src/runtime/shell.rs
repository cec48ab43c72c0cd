//! Persistent shell sessions.
//!
//! Each command runs in a fresh `bash` process placed in its own process
//! group. The working directory and exported environment are captured when
//! the script exits and restored for the next command, so `cd` and `export`
//! persist across calls the way they would in an interactive terminal.

use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use super::CancelToken;
use crate::event::ShellResult;

pub const TIMEOUT_EXIT_CODE: i32 = 124;

const POLL: Duration = Duration::from_millis(10);
/// How long to keep reading output after the shell exits, for background
/// processes that still hold the pipe.
const DRAIN_GRACE: Duration = Duration::from_millis(100);

/// Variables bash sets for itself; they are not carried over.
const VOLATILE_VARS: &[&str] = &["SHLVL", "_", "PWD", "OLDPWD"];

/// Variables copied from the host when a session starts.
const INHERITED_VARS: &[&str] = &["PATH", "HOME", "LANG", "LC_ALL", "USER", "TERM", "TMPDIR"];

#[derive(Debug, thiserror::Error)]
pub enum ShellError {
    #[error("failed to start bash: {0}")]
    Spawn(std::io::Error),
    #[error("command cancelled")]
    Cancelled { partial_output: String },
}

#[derive(Debug)]
pub struct ShellSession {
    cwd: PathBuf,
    env: BTreeMap<String, String>,
    last_exit: Option<i32>,
    state_dir: tempfile::TempDir,
}

impl ShellSession {
    pub fn new(cwd: impl Into<PathBuf>) -> std::io::Result<Self> {
        let env = std::env::vars()
            .filter(|(k, _)| INHERITED_VARS.contains(&k.as_str()))
            .collect();
        Ok(ShellSession {
            cwd: cwd.into(),
            env,
            last_exit: None,
            state_dir: tempfile::Builder::new().prefix("ak-shell-").tempdir()?,
        })
    }

    pub fn cwd(&self) -> &Path {
        &self.cwd
    }

    pub fn env(&self) -> &BTreeMap<String, String> {
        &self.env
    }

    pub fn set_env(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.env.insert(key.into(), value.into());
    }

    pub fn last_exit(&self) -> Option<i32> {
        self.last_exit
    }

    fn script(&self, command: &str) -> String {
        let dir = self.state_dir.path().display().to_string();
        let q = |s: &str| format!("'{}'", s.replace('\'', "'\\''"));
        format!(
            "exec 2>&1\n\
             __ak_save() {{ __ak_rc=$?; pwd > {cwd} 2>/dev/null; env -0 > {env} 2>/dev/null; exit $__ak_rc; }}\n\
             trap __ak_save EXIT\n\
             {command}\n",
            cwd = q(&format!("{dir}/cwd")),
            env = q(&format!("{dir}/env")),
        )
    }

    fn load_state(&mut self) {
        let dir = self.state_dir.path();
        if let Ok(cwd) = std::fs::read_to_string(dir.join("cwd")) {
            let cwd = cwd.trim_end_matches('\n');
            if !cwd.is_empty() {
                self.cwd = PathBuf::from(cwd);
            }
        }
        if let Ok(raw) = std::fs::read(dir.join("env")) {
            let env: BTreeMap<String, String> = raw
                .split(|b| *b == 0)
                .filter_map(|entry| {
                    let entry = String::from_utf8_lossy(entry);
                    let (k, v) = entry.split_once('=')?;
                    (!VOLATILE_VARS.contains(&k)).then(|| (k.to_string(), v.to_string()))
                })
                .collect();
            if !env.is_empty() {
                self.env = env;
            }
        }
        let _ = std::fs::remove_file(dir.join("cwd"));
        let _ = std::fs::remove_file(dir.join("env"));
    }

    /// Runs `command`, killing it after `timeout` or when `cancel` fires.
    pub fn run(&mut self, command: &str, timeout: Duration, cancel: &CancelToken) -> Result<ShellResult, ShellError> {
        let cwd = if self.cwd.is_dir() { self.cwd.clone() } else { PathBuf::from("/") };
        let mut child = Command::new("bash")
            .args(["--noprofile", "--norc", "-c", &self.script(command)])
            .current_dir(&cwd)
            .env_clear()
            .envs(&self.env)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .process_group(0)
            .spawn()
            .map_err(ShellError::Spawn)?;

        let rx = spawn_reader(&mut child);
        let deadline = Instant::now() + timeout;
        let mut output = Vec::new();
        let status = loop {
            while let Ok(chunk) = rx.try_recv() {
                output.extend_from_slice(&chunk);
            }
            if let Ok(Some(status)) = child.try_wait() {
                break Some(status);
            }
            if cancel.is_cancelled() {
                kill_group(&mut child);
                drain(&rx, &mut output, DRAIN_GRACE);
                return Err(ShellError::Cancelled {
                    partial_output: clean_output(&output),
                });
            }
            if Instant::now() >= deadline {
                kill_group(&mut child);
                break None;
            }
            std::thread::sleep(POLL);
        };
        drain(&rx, &mut output, DRAIN_GRACE);

        let result = match status {
            Some(status) => {
                self.load_state();
                let code = status.code().unwrap_or_else(|| {
                    use std::os::unix::process::ExitStatusExt;
                    128 + status.signal().unwrap_or(0)
                });
                ShellResult {
                    exit_code: code,
                    output: clean_output(&output),
                    cwd: self.cwd.display().to_string(),
                    timed_out: false,
                }
            }
            None => ShellResult {
                exit_code: TIMEOUT_EXIT_CODE,
                output: clean_output(&output),
                cwd: self.cwd.display().to_string(),
                timed_out: true,
            },
        };
        self.last_exit = Some(result.exit_code);
        Ok(result)
    }
}

fn spawn_reader(child: &mut Child) -> mpsc::Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    let mut stdout = child.stdout.take().expect("stdout is piped");
    std::thread::spawn(move || {
        let mut buf = [0u8; 8192];
        loop {
            match stdout.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if tx.send(buf[..n].to_vec()).is_err() {
                        break;
                    }
                }
            }
        }
    });
    rx
}

fn drain(rx: &mpsc::Receiver<Vec<u8>>, out: &mut Vec<u8>, grace: Duration) {
    let deadline = Instant::now() + grace;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(chunk) => out.extend_from_slice(&chunk),
            Err(_) => break,
        }
    }
}

fn kill_group(child: &mut Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: signalling a process group we created; no memory is shared.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
    let _ = child.kill();
    let _ = child.wait();
}

fn clean_output(raw: &[u8]) -> String {
    let text = String::from_utf8_lossy(raw);
    text.strip_suffix('\n').unwrap_or(&text).to_string()
}
