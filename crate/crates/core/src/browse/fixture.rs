//! Page fixture files.
//!
//! A fixture is a TOML document describing one page:
//!
//! ```toml
//! url = "http://localhost:8000"
//! title = "The Ultimate Answer"
//!
//! [[node]]
//! bid = "10"
//! role = "button"
//! name = "Click me"
//! clickable = true
//!
//! [[node]]
//! bid = "11"
//! role = "paragraph"
//! hidden = true
//!
//! [[node.children]]
//! role = "StaticText"
//! name = "The answer is 42."
//!
//! [[effect]]
//! on_click = "10"
//! reveal = ["11"]
//! ```
//!
//! Node keys: `bid`, `role`, `name`, `value`, `checked`, `clickable`,
//! `hidden`, `href`, `options`, `children`. Effect keys: `on_click`, `when`
//! (list of `{bid, value?, checked?}`), `reveal`, `hide`, `set_name` and
//! `set_value` (lists of `{bid, text}`), `navigate`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::sim::{Page, Site};

const ULTIMATE_ANSWER: &str = include_str!("../../fixtures/sites/ultimate_answer.toml");
const LOGIN: &str = include_str!("../../fixtures/sites/login.toml");
const WELCOME: &str = include_str!("../../fixtures/sites/welcome.toml");

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn parse_page(text: &str, origin: &str) -> Result<Page, FixtureError> {
    let invalid = |message: String| FixtureError::Invalid {
        path: origin.to_string(),
        message,
    };
    let page: Page = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
    let mut seen = HashSet::new();
    for bid in page.bids() {
        if !seen.insert(bid.clone()) {
            return Err(invalid(format!("duplicate bid {bid}")));
        }
    }
    for effect in &page.effects {
        let refs = std::iter::once(&effect.on_click)
            .chain(&effect.reveal)
            .chain(&effect.hide)
            .chain(effect.when.iter().map(|c| &c.bid))
            .chain(effect.set_name.iter().map(|s| &s.bid))
            .chain(effect.set_value.iter().map(|s| &s.bid));
        for bid in refs {
            if !seen.contains(bid) {
                return Err(invalid(format!("effect refers to unknown bid {bid}")));
            }
        }
    }
    if let Some(f) = &page.focused {
        if !seen.contains(f) {
            return Err(invalid(format!("focused bid {f} does not exist")));
        }
    }
    Ok(page)
}

pub fn load_page(path: &Path) -> Result<Page, FixtureError> {
    let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_page(&text, &path.display().to_string())
}

/// Every `*.toml` file in `dir`, in file-name order.
pub fn load_site_dir(dir: &Path) -> Result<Site, FixtureError> {
    let io = |source| FixtureError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    let mut site = Site::default();
    for f in files {
        site.add(load_page(&f)?);
    }
    Ok(site)
}

/// The "Ultimate Answer" demo page.
pub fn ultimate_answer_site() -> Site {
    Site::new(vec![parse_page(ULTIMATE_ANSWER, "ultimate_answer.toml").expect("shipped fixture is valid")])
}

/// All pages that ship with the crate.
pub fn builtin_site() -> Site {
    let mut site = ultimate_answer_site();
    for (text, name) in [(LOGIN, "login.toml"), (WELCOME, "welcome.toml")] {
        site.add(parse_page(text, name).expect("shipped fixture is valid"));
    }
    site
}
