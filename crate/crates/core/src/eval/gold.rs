//! Byte-exact comparison of a workspace against gold files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoldDiff {
    Missing { path: String },
    /// `offset` is the first differing byte; a length difference counts
    /// at the end of the shorter file.
    Differs { path: String, offset: usize },
    Extra { path: String },
}

impl fmt::Display for GoldDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoldDiff::Missing { path } => write!(f, "missing {path}"),
            GoldDiff::Differs { path, offset } => write!(f, "{path} differs at byte {offset}"),
            GoldDiff::Extra { path } => write!(f, "extra {path}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldComparison {
    pub matched: bool,
    pub diffs: Vec<GoldDiff>,
}

/// Files under `root` keyed by `/`-separated relative path.
pub fn read_tree(root: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays under root");
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        files.insert(key, std::fs::read(entry.path())?);
    }
    Ok(files)
}

fn first_difference(a: &[u8], b: &[u8]) -> Option<usize> {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Some(i),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}

/// Compares every gold file with the workspace copy. Workspace files not in
/// the gold set are listed and fail the comparison only when `strict`.
pub fn compare_trees(workspace: &BTreeMap<String, Vec<u8>>, gold: &BTreeMap<String, Vec<u8>>, strict: bool) -> GoldComparison {
    let mut diffs = Vec::new();
    for (path, expected) in gold {
        match workspace.get(path) {
            None => diffs.push(GoldDiff::Missing { path: path.clone() }),
            Some(actual) => {
                if let Some(offset) = first_difference(actual, expected) {
                    diffs.push(GoldDiff::Differs { path: path.clone(), offset });
                }
            }
        }
    }
    for path in workspace.keys().filter(|p| !gold.contains_key(*p)) {
        diffs.push(GoldDiff::Extra { path: path.clone() });
    }
    let matched = diffs.iter().all(|d| matches!(d, GoldDiff::Extra { .. }) && !strict);
    GoldComparison { matched, diffs }
}

pub fn compare_gold(workspace: &Path, gold: &Path, strict: bool) -> std::io::Result<GoldComparison> {
    Ok(compare_trees(&read_tree(workspace)?, &read_tree(gold)?, strict))
}
