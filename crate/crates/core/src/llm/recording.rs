//! Recorded prompt/response pairs.
//!
//! A recording file is JSON lines. The first line is a header, every other
//! line one entry:
//!
//! ```text
//! {"kind":"recording_header","model":"gpt-4o","platform_version":"0.1.0"}
//! {"kind":"entry","normalized_prompt":"...","prompt_digest":"9f2c...","raw_prompt":"...","response":"...","unit_cost":0.0,"usage":{"input_tokens":812,"output_tokens":40}}
//! ```

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::normalize::{normalize_prompt, prompt_digest, raw_prompt};
use super::{CompletionRequest, LlmError, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub model: String,
    pub platform_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub prompt_digest: String,
    pub normalized_prompt: String,
    pub raw_prompt: String,
    pub response: String,
    pub usage: Usage,
    /// Cost of the recorded call.
    pub unit_cost: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    RecordingHeader(RecordingHeader),
    Entry(RecordingEntry),
}

/// Why a replay lookup failed, with the closest recorded prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMiss {
    pub digest: String,
    pub nearest_digest: Option<String>,
    pub nearest_distance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub header: RecordingHeader,
    entries: Vec<RecordingEntry>,
    by_digest: HashMap<String, usize>,
    by_raw: HashMap<String, usize>,
}

impl Recording {
    pub fn new(header: RecordingHeader) -> Self {
        Recording {
            header,
            entries: Vec::new(),
            by_digest: HashMap::new(),
            by_raw: HashMap::new(),
        }
    }

    pub fn entries(&self) -> &[RecordingEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds an entry unless its digest is already present. Returns whether
    /// it was added.
    pub fn insert(&mut self, entry: RecordingEntry) -> bool {
        if self.by_digest.contains_key(&entry.prompt_digest) {
            return false;
        }
        let idx = self.entries.len();
        self.by_digest.insert(entry.prompt_digest.clone(), idx);
        self.by_raw.entry(entry.raw_prompt.clone()).or_insert(idx);
        self.entries.push(entry);
        true
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, LlmError> {
        let bad = |n: usize, msg: String| LlmError::Recording(format!("{origin}:{n}: {msg}"));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = match lines.next() {
            Some((n, l)) => match serde_json::from_str::<Line>(l).map_err(|e| bad(n + 1, e.to_string()))? {
                Line::RecordingHeader(h) => h,
                Line::Entry(_) => return Err(bad(n + 1, "expected a recording_header line".into())),
            },
            None => return Err(LlmError::Recording(format!("{origin}: empty recording"))),
        };
        let mut rec = Recording::new(header);
        for (n, l) in lines {
            match serde_json::from_str::<Line>(l).map_err(|e| bad(n + 1, e.to_string()))? {
                Line::Entry(e) => {
                    if prompt_digest(&e.normalized_prompt) != e.prompt_digest {
                        return Err(bad(n + 1, "prompt_digest does not match normalized_prompt".into()));
                    }
                    if !rec.insert(e) {
                        return Err(bad(n + 1, "duplicate prompt_digest".into()));
                    }
                }
                Line::RecordingHeader(_) => return Err(bad(n + 1, "second header".into())),
            }
        }
        Ok(rec)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Recording(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Line::RecordingHeader(self.header.clone())).expect("serializable");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(&Line::Entry(e.clone())).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| LlmError::Recording(format!("{}: {e}", path.display())))
    }

    /// Exact prompt first, then normalized digest.
    pub fn lookup(&self, req: &CompletionRequest) -> Result<&RecordingEntry, ReplayMiss> {
        let raw = raw_prompt(req);
        if let Some(&i) = self.by_raw.get(&raw) {
            return Ok(&self.entries[i]);
        }
        let normalized = normalize_prompt(req);
        let digest = prompt_digest(&normalized);
        if let Some(&i) = self.by_digest.get(&digest) {
            return Ok(&self.entries[i]);
        }
        let nearest = self
            .entries
            .iter()
            .map(|e| (strsim::levenshtein(&e.normalized_prompt, &normalized), e))
            .min_by_key(|(d, _)| *d);
        Err(ReplayMiss {
            digest,
            nearest_digest: nearest.map(|(_, e)| e.prompt_digest.clone()),
            nearest_distance: nearest.map(|(d, _)| d),
        })
    }
}

/// Recording that is written to disk as entries arrive.
#[derive(Debug)]
pub struct RecordingWriter {
    path: PathBuf,
    recording: Mutex<Recording>,
}

impl RecordingWriter {
    /// Starts a new file at `path`, replacing any existing one.
    pub fn create(path: &Path, header: RecordingHeader) -> Result<Self, LlmError> {
        let rec = Recording::new(header);
        rec.save(path)?;
        Ok(RecordingWriter {
            path: path.to_path_buf(),
            recording: Mutex::new(rec),
        })
    }

    pub fn append(&self, entry: RecordingEntry) -> Result<(), LlmError> {
        let mut rec = self.recording.lock().unwrap_or_else(|p| p.into_inner());
        if !rec.insert(entry.clone()) {
            return Ok(());
        }
        let line = serde_json::to_string(&Line::Entry(entry)).expect("serializable");
        std::fs::OpenOptions::new()
            .append(true)
            .open(&self.path)
            .and_then(|mut f| writeln!(f, "{line}"))
            .map_err(|e| LlmError::Recording(format!("{}: {e}", self.path.display())))
    }

    pub fn snapshot(&self) -> Recording {
        self.recording.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}
