//! File-editing and search skills available inside code cells.
//!
//! A [`SkillSession`] holds the open file and its viewing window. Every
//! operation returns the text the agent sees, or a [`SkillError`] whose
//! message is shown instead. Failed operations change neither the
//! filesystem nor the session.
//!
//! The window shows up to [`WINDOW`] lines around a cursor line:
//!
//! ```text
//! [File: notes.txt (3 lines total)]
//! (this is the beginning of the file)
//! 1|first
//! 2|second
//! 3|third
//! (this is the end of the file)
//! ```

mod media;

use std::path::{Path, PathBuf};

use serde_json::Value as Json;

pub use media::{MediaKind, MediaProvider, StubMediaProvider};

pub const WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct SkillError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, SkillError> {
    Err(SkillError(msg.into()))
}

/// Text split into lines. The trailing newline is remembered separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineBuffer {
    pub lines: Vec<String>,
    pub trailing_newline: bool,
}

impl LineBuffer {
    pub fn parse(text: &str) -> Self {
        if text.is_empty() {
            return LineBuffer {
                lines: Vec::new(),
                trailing_newline: false,
            };
        }
        let trailing_newline = text.ends_with('\n');
        let body = if trailing_newline { &text[..text.len() - 1] } else { text };
        LineBuffer {
            lines: body.split('\n').map(str::to_string).collect(),
            trailing_newline,
        }
    }

    pub fn render(&self) -> String {
        if self.lines.is_empty() {
            return String::new();
        }
        let mut out = self.lines.join("\n");
        // a final empty line only survives a re-read when newline-terminated
        if self.trailing_newline || self.lines.last().is_some_and(|l| l.is_empty()) {
            out.push('\n');
        }
        out
    }
}

/// Lines of edit content; `""` is zero lines and one trailing newline is ignored.
pub fn content_lines(content: &str) -> Vec<String> {
    let mut parts: Vec<String> = content.split('\n').map(str::to_string).collect();
    if parts.last().is_some_and(|l| l.is_empty()) {
        parts.pop();
    }
    parts
}

/// First and last line shown for a cursor, both 1-based and inclusive.
/// Returns `(1, 0)` for an empty file.
pub fn window_bounds(cursor: usize, total: usize, window: usize) -> (usize, usize) {
    let half = window / 2;
    let mut start = cursor as i64 - half as i64;
    if start + window as i64 - 1 > total as i64 {
        start = total as i64 - window as i64 + 1;
    }
    let start = start.max(1) as usize;
    let end = total.min(start + window - 1);
    (start, end)
}

pub fn render_window(shown: &str, buf: &LineBuffer, cursor: usize, window: usize) -> String {
    let total = buf.lines.len();
    let (start, end) = window_bounds(cursor, total, window);
    let mut out = format!("[File: {shown} ({total} lines total)]\n");
    if start <= 1 {
        out.push_str("(this is the beginning of the file)\n");
    } else {
        out.push_str(&format!("({} more lines above)\n", start - 1));
    }
    for n in start..=end {
        out.push_str(&format!("{n}|{}\n", buf.lines[n - 1]));
    }
    if end >= total {
        out.push_str("(this is the end of the file)");
    } else {
        out.push_str(&format!("({} more lines below)", total - end));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct OpenFile {
    path: PathBuf,
    cursor: usize,
}

pub struct SkillSession {
    workspace: PathBuf,
    cwd: PathBuf,
    open: Option<OpenFile>,
    window: usize,
    media: Box<dyn MediaProvider>,
}

impl std::fmt::Debug for SkillSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SkillSession")
            .field("workspace", &self.workspace)
            .field("cwd", &self.cwd)
            .field("open", &self.open)
            .finish()
    }
}

impl SkillSession {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        let workspace = workspace.into();
        SkillSession {
            cwd: workspace.clone(),
            workspace,
            open: None,
            window: WINDOW,
            media: Box::new(StubMediaProvider),
        }
    }

    pub fn with_media_provider(mut self, provider: Box<dyn MediaProvider>) -> Self {
        self.media = provider;
        self
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window.max(1);
        self
    }

    /// Directory against which relative paths resolve.
    pub fn set_cwd(&mut self, cwd: impl Into<PathBuf>) {
        self.cwd = cwd.into();
    }

    pub fn open_path(&self) -> Option<&Path> {
        self.open.as_ref().map(|o| o.path.as_path())
    }

    pub fn cursor(&self) -> Option<usize> {
        self.open.as_ref().map(|o| o.cursor)
    }

    fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.cwd.join(p)
        }
    }

    /// Path as shown to the agent: relative to the workspace when inside it.
    fn shown(&self, path: &Path) -> String {
        let clean = normalize(path);
        match clean.strip_prefix(normalize(&self.workspace)) {
            Ok(rel) if rel.as_os_str().is_empty() => ".".into(),
            Ok(rel) => rel.display().to_string(),
            Err(_) => clean.display().to_string(),
        }
    }

    fn read(&self, path: &Path) -> Result<LineBuffer, SkillError> {
        if !path.is_file() {
            return err(format!("File {} not found", self.shown(path)));
        }
        std::fs::read_to_string(path)
            .map(|t| LineBuffer::parse(&t))
            .map_err(|e| SkillError(format!("Cannot read {}: {e}", self.shown(path))))
    }

    fn current(&self) -> Result<(OpenFile, LineBuffer), SkillError> {
        let open = self.open.clone().ok_or_else(|| SkillError("No file open".into()))?;
        let buf = self.read(&open.path)?;
        Ok((open, buf))
    }

    fn show(&self, open: &OpenFile, buf: &LineBuffer) -> String {
        render_window(&self.shown(&open.path), buf, open.cursor, self.window)
    }

    fn clamp(cursor: i64, total: usize) -> usize {
        cursor.clamp(1, total.max(1) as i64) as usize
    }

    pub fn open_file(&mut self, path: &str, line_number: Option<i64>) -> Result<String, SkillError> {
        let full = self.resolve(path);
        let buf = self.read(&full)?;
        let total = buf.lines.len();
        let cursor = match line_number {
            Some(n) if n < 1 || n as usize > total.max(1) => {
                return err(format!("Line number {n} is out of range; {} has {total} lines", self.shown(&full)))
            }
            Some(n) => n as usize,
            None => 1,
        };
        let open = OpenFile { path: full, cursor };
        let text = self.show(&open, &buf);
        self.open = Some(open);
        Ok(text)
    }

    pub fn goto_line(&mut self, line_number: i64) -> Result<String, SkillError> {
        let (mut open, buf) = self.current()?;
        let total = buf.lines.len();
        if line_number < 1 || line_number as usize > total.max(1) {
            return err(format!("Line number {line_number} is out of range; the file has {total} lines"));
        }
        open.cursor = line_number as usize;
        let text = self.show(&open, &buf);
        self.open = Some(open);
        Ok(text)
    }

    fn scroll(&mut self, down: bool) -> Result<String, SkillError> {
        let (mut open, buf) = self.current()?;
        let total = buf.lines.len();
        let (start, _) = window_bounds(open.cursor, total, self.window);
        let center = (start + self.window / 2) as i64;
        let step = self.window as i64;
        open.cursor = Self::clamp(if down { center + step } else { center - step }, total);
        let text = self.show(&open, &buf);
        self.open = Some(open);
        Ok(text)
    }

    pub fn scroll_down(&mut self) -> Result<String, SkillError> {
        self.scroll(true)
    }

    pub fn scroll_up(&mut self) -> Result<String, SkillError> {
        self.scroll(false)
    }

    pub fn create_file(&mut self, filename: &str) -> Result<String, SkillError> {
        let full = self.resolve(filename);
        if full.exists() {
            return err(format!("File already exists: {}", self.shown(&full)));
        }
        if let Some(parent) = full.parent() {
            if !parent.is_dir() {
                return err(format!("Directory {} does not exist", self.shown(parent)));
            }
        }
        std::fs::write(&full, "").map_err(|e| SkillError(format!("Cannot create {}: {e}", self.shown(&full))))?;
        let open = OpenFile { path: full, cursor: 1 };
        let text = self.show(&open, &LineBuffer::parse(""));
        self.open = Some(open);
        Ok(text)
    }

    pub fn edit_file(&mut self, start: i64, end: i64, content: &str) -> Result<String, SkillError> {
        let (mut open, mut buf) = self.current()?;
        if buf.lines.is_empty() {
            // an empty file is edited as a single blank line
            buf.lines.push(String::new());
            buf.trailing_newline = true;
        }
        let total = buf.lines.len() as i64;
        if start < 1 || start > end || end > total {
            return err(format!(
                "Invalid line range: start={start}, end={end}; must satisfy 1 <= start <= end <= {total}"
            ));
        }
        let (s, e) = (start as usize, end as usize);
        buf.lines.splice(s - 1..e, content_lines(content));
        std::fs::write(&open.path, buf.render())
            .map_err(|err| SkillError(format!("Cannot write {}: {err}", self.shown(&open.path))))?;
        open.cursor = Self::clamp(start, buf.lines.len());
        let text = self.show(&open, &buf);
        self.open = Some(open);
        Ok(text)
    }

    pub fn search_dir(&self, term: &str, dir_path: Option<&str>) -> Result<String, SkillError> {
        let dir = self.resolve(dir_path.unwrap_or("./"));
        if !dir.is_dir() {
            return err(format!("Directory {} not found", self.shown(&dir)));
        }
        let mut hits = Vec::new();
        for path in sorted_files(&dir) {
            // binary files are skipped
            let Ok(text) = std::fs::read_to_string(&path) else { continue };
            let shown = self.shown(&path);
            for (i, line) in LineBuffer::parse(&text).lines.iter().enumerate() {
                if line.contains(term) {
                    hits.push(format!("{shown}:{}: {line}", i + 1));
                }
            }
        }
        Ok(listing(term, &self.shown(&dir), hits))
    }

    pub fn search_file(&self, term: &str, file_path: Option<&str>) -> Result<String, SkillError> {
        let path = match file_path {
            Some(p) => self.resolve(p),
            None => self.open.as_ref().ok_or_else(|| SkillError("No file open".into()))?.path.clone(),
        };
        let buf = self.read(&path)?;
        let shown = self.shown(&path);
        let hits = buf
            .lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.contains(term))
            .map(|(i, l)| format!("{shown}:{}: {l}", i + 1))
            .collect();
        Ok(listing(term, &shown, hits))
    }

    pub fn find_file(&self, file_name: &str, dir_path: Option<&str>) -> Result<String, SkillError> {
        let dir = self.resolve(dir_path.unwrap_or("./"));
        if !dir.is_dir() {
            return err(format!("Directory {} not found", self.shown(&dir)));
        }
        let hits = sorted_files(&dir)
            .into_iter()
            .filter(|p| p.file_name().is_some_and(|n| n == file_name))
            .map(|p| self.shown(&p))
            .collect();
        Ok(listing(file_name, &self.shown(&dir), hits))
    }

    pub fn parse_media(&self, path: &str, kind: MediaKind) -> Result<String, SkillError> {
        let full = self.resolve(path);
        if !full.is_file() {
            return err(format!("File {path} not found"));
        }
        self.media.parse(&full, path, kind).map_err(SkillError)
    }

    /// Calls a skill by name with JSON keyword arguments.
    pub fn dispatch(&mut self, name: &str, args: &Json) -> Result<String, SkillError> {
        let a = Args { name, args };
        match name {
            "open_file" => self.open_file(&a.str("path")?, a.opt_int("line_number")?),
            "goto_line" => self.goto_line(a.int("line_number")?),
            "scroll_down" => self.scroll_down(),
            "scroll_up" => self.scroll_up(),
            "create_file" => self.create_file(&a.str("filename")?),
            "edit_file" => self.edit_file(a.int("start")?, a.int("end")?, &a.str("content")?),
            "search_dir" => self.search_dir(&a.str("search_term")?, a.opt_str("dir_path")?.as_deref()),
            "search_file" => self.search_file(&a.str("search_term")?, a.opt_str("file_path")?.as_deref()),
            "find_file" => self.find_file(&a.str("file_name")?, a.opt_str("dir_path")?.as_deref()),
            other => match other.strip_prefix("parse_").and_then(MediaKind::from_name) {
                Some(kind) => self.parse_media(&a.str("file_path")?, kind),
                None => err(format!("Unknown skill {other}")),
            },
        }
    }
}

/// Names callable through [`SkillSession::dispatch`], with parameter lists.
pub const SKILL_SIGNATURES: &[(&str, &str)] = &[
    ("open_file", "path, line_number=None"),
    ("goto_line", "line_number"),
    ("scroll_down", ""),
    ("scroll_up", ""),
    ("create_file", "filename"),
    ("edit_file", "start, end, content"),
    ("search_dir", "search_term, dir_path=None"),
    ("search_file", "search_term, file_path=None"),
    ("find_file", "file_name, dir_path=None"),
    ("parse_pdf", "file_path"),
    ("parse_docx", "file_path"),
    ("parse_latex", "file_path"),
    ("parse_audio", "file_path, model='whisper-1'"),
    ("parse_image", "file_path, task=None"),
    ("parse_video", "file_path, task=None, frame_interval=30"),
    ("parse_pptx", "file_path"),
];

struct Args<'a> {
    name: &'a str,
    args: &'a Json,
}

impl Args<'_> {
    fn get(&self, key: &str) -> Option<&Json> {
        self.args.get(key).filter(|v| !v.is_null())
    }

    fn str(&self, key: &str) -> Result<String, SkillError> {
        self.opt_str(key)?
            .ok_or_else(|| SkillError(format!("{}() missing required argument '{key}'", self.name)))
    }

    fn opt_str(&self, key: &str) -> Result<Option<String>, SkillError> {
        match self.get(key) {
            None => Ok(None),
            Some(Json::String(s)) => Ok(Some(s.clone())),
            Some(other) => err(format!("{}(): '{key}' must be a string, got {other}", self.name)),
        }
    }

    fn int(&self, key: &str) -> Result<i64, SkillError> {
        self.opt_int(key)?
            .ok_or_else(|| SkillError(format!("{}() missing required argument '{key}'", self.name)))
    }

    fn opt_int(&self, key: &str) -> Result<Option<i64>, SkillError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_i64()
                .map(Some)
                .ok_or_else(|| SkillError(format!("{}(): '{key}' must be an integer, got {v}", self.name))),
        }
    }
}

fn listing(term: &str, scope: &str, hits: Vec<String>) -> String {
    if hits.is_empty() {
        return format!("No matches found for \"{term}\"");
    }
    let mut out = format!("[Found {} matches for \"{term}\" in {scope}]\n", hits.len());
    for h in hits {
        out.push_str(&h);
        out.push('\n');
    }
    out.push_str(&format!("[End of matches for \"{term}\" in {scope}]"));
    out
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    walkdir::WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect()
}

/// Removes `.` components and folds `..` lexically.
fn normalize(path: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> (tempfile::TempDir, SkillSession) {
        let dir = tempfile::tempdir().unwrap();
        let s = SkillSession::new(dir.path());
        (dir, s)
    }

    fn numbered(n: usize) -> String {
        (1..=n).map(|i| format!("line {i}\n")).collect()
    }

    #[test]
    fn open_three_line_file() {
        let (dir, mut s) = session();
        std::fs::write(dir.path().join("a.txt"), "x\ny\nz\n").unwrap();
        assert_eq!(
            s.open_file("a.txt", None).unwrap(),
            "[File: a.txt (3 lines total)]\n(this is the beginning of the file)\n1|x\n2|y\n3|z\n(this is the end of the file)"
        );
    }

    #[test]
    fn open_with_line_number_includes_it() {
        let (dir, mut s) = session();
        std::fs::write(dir.path().join("big.txt"), numbered(300)).unwrap();
        let text = s.open_file("big.txt", Some(250)).unwrap();
        assert!(text.contains("\n250|line 250\n"));
        assert!(text.contains("(199 more lines above)"));
        assert!(text.contains("(1 more lines below)"));
    }

    #[test]
    fn missing_file_keeps_previous() {
        let (dir, mut s) = session();
        std::fs::write(dir.path().join("a.txt"), "x\n").unwrap();
        s.open_file("a.txt", None).unwrap();
        assert_eq!(s.open_file("nope.txt", None).unwrap_err().0, "File nope.txt not found");
        assert_eq!(s.open_path(), Some(dir.path().join("a.txt").as_path()));
    }

    #[test]
    fn edits() {
        let (dir, mut s) = session();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, "a\nb\nc").unwrap();
        s.open_file("a.txt", None).unwrap();
        s.edit_file(2, 2, "B").unwrap();
        assert_eq!(std::fs::read_to_string(&f).unwrap(), "a\nB\nc");
        s.edit_file(1, 1, "x\ny").unwrap();
        assert_eq!(std::fs::read_to_string(&f).unwrap(), "x\ny\nB\nc");
        let before = std::fs::read(&f).unwrap();
        assert!(s.edit_file(0, 1, "q").unwrap_err().0.contains("start=0"));
        assert!(s.edit_file(3, 9, "q").is_err());
        assert_eq!(std::fs::read(&f).unwrap(), before);
    }

    #[test]
    fn edit_without_open_file() {
        let (_dir, mut s) = session();
        assert_eq!(s.edit_file(1, 1, "x").unwrap_err().0, "No file open");
        assert_eq!(s.scroll_down().unwrap_err().0, "No file open");
    }

    #[test]
    fn scrolling() {
        let (dir, mut s) = session();
        std::fs::write(dir.path().join("big.txt"), numbered(300)).unwrap();
        let top = s.open_file("big.txt", None).unwrap();
        assert_eq!(s.scroll_up().unwrap(), top);
        let down = s.scroll_down().unwrap();
        assert!(down.contains("(100 more lines above)\n101|line 101\n"), "{down}");
        assert_eq!(s.scroll_up().unwrap(), top);
    }

    #[test]
    fn search_and_find() {
        let (dir, mut s) = session();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("b.txt"), "needle\nhay\nneedle again\n").unwrap();
        std::fs::write(dir.path().join("a.txt"), "hay\n").unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "no\n").unwrap();
        assert_eq!(s.search_dir("zzz", None).unwrap(), "No matches found for \"zzz\"");
        assert_eq!(
            s.search_dir("needle", None).unwrap(),
            "[Found 2 matches for \"needle\" in .]\nb.txt:1: needle\nb.txt:3: needle again\n[End of matches for \"needle\" in .]"
        );
        assert_eq!(
            s.find_file("b.txt", None).unwrap(),
            "[Found 2 matches for \"b.txt\" in .]\nb.txt\nsub/b.txt\n[End of matches for \"b.txt\" in .]"
        );
        assert!(s.search_file("hay", None).is_err());
        s.open_file("b.txt", None).unwrap();
        assert!(s.search_file("hay", None).unwrap().contains("b.txt:2: hay"));
        assert!(s.find_file("x", Some("missing")).is_err());
    }

    #[test]
    fn create_file_rules() {
        let (dir, mut s) = session();
        let text = s.create_file("new.py").unwrap();
        assert!(text.starts_with("[File: new.py (0 lines total)]"));
        std::fs::write(dir.path().join("new.py"), "keep").unwrap();
        assert!(s.create_file("new.py").unwrap_err().0.starts_with("File already exists"));
        assert_eq!(std::fs::read_to_string(dir.path().join("new.py")).unwrap(), "keep");
        assert_eq!(s.create_file("nodir/x.py").unwrap_err().0, "Directory nodir does not exist");
    }

    #[test]
    fn trailing_newline_handling() {
        let (dir, mut s) = session();
        s.create_file("n.txt").unwrap();
        s.edit_file(1, 1, "print('hi')").unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("n.txt")).unwrap(), "print('hi')\n");
        std::fs::write(dir.path().join("m.txt"), "a\n").unwrap();
        s.open_file("m.txt", None).unwrap();
        s.edit_file(1, 1, "b\nc\n").unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("m.txt")).unwrap(), "b\nc\n");
    }

    #[test]
    fn media_stub_and_provider_swap() {
        struct Upper;
        impl MediaProvider for Upper {
            fn parse(&self, _: &Path, shown: &str, kind: MediaKind) -> Result<String, String> {
                Ok(format!("{}:{}", kind, shown.to_uppercase()))
            }
        }
        let (dir, s) = session();
        std::fs::write(dir.path().join("a.pdf"), "%PDF").unwrap();
        assert_eq!(s.parse_media("a.pdf", MediaKind::Pdf).unwrap(), "[stub pdf: a.pdf]");
        assert!(s.parse_media("b.pdf", MediaKind::Pdf).is_err());
        let s = s.with_media_provider(Box::new(Upper));
        assert_eq!(s.parse_media("a.pdf", MediaKind::Pdf).unwrap(), "pdf:A.PDF");
    }

    #[test]
    fn dispatch_by_name() {
        let (dir, mut s) = session();
        std::fs::write(dir.path().join("a.txt"), "x\n").unwrap();
        let out = s.dispatch("open_file", &serde_json::json!({"path": "a.txt"})).unwrap();
        assert!(out.contains("1|x"));
        assert!(s.dispatch("edit_file", &serde_json::json!({"start": "1"})).is_err());
        assert!(s.dispatch("teleport", &serde_json::json!({})).is_err());
        std::fs::write(dir.path().join("v.mp4"), "").unwrap();
        assert_eq!(
            s.dispatch("parse_video", &serde_json::json!({"file_path": "v.mp4"})).unwrap(),
            "[stub video: v.mp4]"
        );
    }
}
