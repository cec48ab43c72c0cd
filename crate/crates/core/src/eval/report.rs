//! Suite summaries as a text table and as JSON lines.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TaskResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub suite: String,
    pub total: usize,
    pub successes: usize,
    /// Percentage in `[0, 100]`.
    pub success_rate: f64,
    pub mean_cost: f64,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Summary,
    pub results: Vec<TaskResult>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Summary(Summary),
    Result(TaskResult),
}

pub fn summarize(suite: &str, results: Vec<TaskResult>) -> Report {
    let total = results.len();
    let successes = results.iter().filter(|r| r.success).count();
    let mean = |f: &dyn Fn(&TaskResult) -> f64| {
        if total == 0 {
            0.0
        } else {
            results.iter().map(f).sum::<f64>() / total as f64
        }
    };
    let summary = Summary {
        suite: suite.to_string(),
        total,
        successes,
        success_rate: if total == 0 { 0.0 } else { successes as f64 * 100.0 / total as f64 },
        mean_cost: mean(&|r| r.cost),
        mean_steps: mean(&|r| r.steps as f64),
    };
    Report { summary, results }
}

impl Report {
    pub fn to_text(&self) -> String {
        let rows: Vec<[String; 6]> = self
            .results
            .iter()
            .map(|r| {
                [
                    r.id.clone(),
                    if r.success { "pass" } else { "FAIL" }.to_string(),
                    r.termination.map(|t| t.as_str()).unwrap_or("-").to_string(),
                    r.steps.to_string(),
                    format!("{:.4}", r.cost),
                    format!("{:.2}", r.duration_ms as f64 / 1000.0),
                ]
            })
            .collect();
        let header = ["task", "result", "termination", "steps", "cost ($)", "time (s)"].map(String::from);
        let mut widths = header.clone().map(|h| h.len());
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String; 6]| {
            let mut out = String::new();
            for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
                if i == 0 {
                    out.push_str(&format!("{cell:<w$}"));
                } else {
                    out.push_str(&format!("  {cell:>w$}"));
                }
            }
            out.trim_end().to_string() + "\n"
        };
        let mut out = line(&header);
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &rows {
            out.push_str(&line(row));
        }
        let s = &self.summary;
        out.push_str(&format!(
            "\nsuite {}: {}/{} succeeded ({:.1}%), mean cost ${:.4}, mean steps {:.2}\n",
            s.suite, s.successes, s.total, s.success_rate, s.mean_cost, s.mean_steps
        ));
        for r in self.results.iter().filter(|r| !r.success && !r.detail.is_empty()) {
            out.push_str(&format!("\n{}: {}\n", r.id, r.detail));
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Line::Summary(self.summary.clone())).expect("serializable");
        out.push('\n');
        for r in &self.results {
            out.push_str(&serde_json::to_string(&Line::Result(r.clone())).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut summary = None;
        let mut results = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<Line>(line)? {
                Line::Summary(s) => summary = Some(s),
                Line::Result(r) => results.push(r),
            }
        }
        let summary = summary.ok_or_else(|| serde::de::Error::custom("report has no summary line"))?;
        Ok(Report { summary, results })
    }

    /// Writes `<dir>/<suite>-<stamp>.txt` and `.jsonl`.
    pub fn write(&self, dir: &Path, stamp: &str) -> std::io::Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let base = format!("{}-{stamp}", self.summary.suite);
        let txt = dir.join(format!("{base}.txt"));
        let jsonl = dir.join(format!("{base}.jsonl"));
        std::fs::write(&txt, self.to_text())?;
        std::fs::write(&jsonl, self.to_jsonl())?;
        Ok((txt, jsonl))
    }
}
