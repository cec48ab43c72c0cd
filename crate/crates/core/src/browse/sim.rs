//! Element-level page simulator.
//!
//! A [`BrowserState`] is an immutable value; [`sim_execute`] returns a new
//! state and leaves its input alone. Pages come from a [`Site`], a set of
//! fixtures keyed by URL, and clicks trigger the fixture's scripted effects.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::parser::{format_number, ActionProgram};
use super::typecheck::{typecheck_call, ActionSubset, Command};
use crate::event::EpisodeStatus;

pub const BLANK_URL: &str = "about:blank";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    #[serde(default)]
    pub bid: Option<String>,
    pub role: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub value: Option<String>,
    #[serde(default)]
    pub checked: Option<bool>,
    #[serde(default)]
    pub clickable: bool,
    #[serde(default)]
    pub hidden: bool,
    /// Target of a link.
    #[serde(default)]
    pub href: Option<String>,
    /// Choices of a select element.
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default)]
    pub children: Vec<Node>,
}

impl Node {
    pub fn new(bid: Option<&str>, role: &str, name: &str) -> Self {
        Node {
            bid: bid.map(str::to_string),
            role: role.to_string(),
            name: name.to_string(),
            value: None,
            checked: None,
            clickable: false,
            hidden: false,
            href: None,
            options: Vec::new(),
            children: Vec::new(),
        }
    }
}

/// Condition guarding an effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub bid: String,
    #[serde(default)]
    pub value: Option<String>,
    #[serde(default)]
    pub checked: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetText {
    pub bid: String,
    pub text: String,
}

/// Scripted reaction to a click on `on_click`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub on_click: String,
    #[serde(default)]
    pub when: Vec<Condition>,
    #[serde(default)]
    pub reveal: Vec<String>,
    #[serde(default)]
    pub hide: Vec<String>,
    #[serde(default)]
    pub set_name: Vec<SetText>,
    #[serde(default)]
    pub set_value: Vec<SetText>,
    #[serde(default)]
    pub navigate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub url: String,
    pub title: String,
    #[serde(default, rename = "node")]
    pub nodes: Vec<Node>,
    #[serde(default, rename = "effect")]
    pub effects: Vec<Effect>,
    #[serde(default)]
    pub focused: Option<String>,
}

impl Page {
    pub fn blank() -> Self {
        Page {
            url: BLANK_URL.into(),
            title: String::new(),
            nodes: Vec::new(),
            effects: Vec::new(),
            focused: None,
        }
    }

    /// Visible node with the given bid.
    pub fn find(&self, bid: &str) -> Option<&Node> {
        fn walk<'a>(nodes: &'a [Node], bid: &str) -> Option<&'a Node> {
            for n in nodes {
                if n.hidden {
                    continue;
                }
                if n.bid.as_deref() == Some(bid) {
                    return Some(n);
                }
                if let Some(found) = walk(&n.children, bid) {
                    return Some(found);
                }
            }
            None
        }
        walk(&self.nodes, bid)
    }

    /// Any node with the given bid, hidden or not.
    fn find_any_mut(&mut self, bid: &str) -> Option<&mut Node> {
        fn walk<'a>(nodes: &'a mut [Node], bid: &str) -> Option<&'a mut Node> {
            for n in nodes {
                if n.bid.as_deref() == Some(bid) {
                    return Some(n);
                }
                if let Some(found) = walk(&mut n.children, bid) {
                    return Some(found);
                }
            }
            None
        }
        walk(&mut self.nodes, bid)
    }

    fn find_any(&self, bid: &str) -> Option<&Node> {
        fn walk<'a>(nodes: &'a [Node], bid: &str) -> Option<&'a Node> {
            for n in nodes {
                if n.bid.as_deref() == Some(bid) {
                    return Some(n);
                }
                if let Some(found) = walk(&n.children, bid) {
                    return Some(found);
                }
            }
            None
        }
        walk(&self.nodes, bid)
    }

    pub fn bids(&self) -> Vec<String> {
        fn walk(nodes: &[Node], out: &mut Vec<String>) {
            for n in nodes {
                if let Some(b) = &n.bid {
                    out.push(b.clone());
                }
                walk(&n.children, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.nodes, &mut out);
        out
    }
}

fn same_url(a: &str, b: &str) -> bool {
    a.trim_end_matches('/') == b.trim_end_matches('/')
}

/// Pages reachable by `goto`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Site {
    pages: Vec<Page>,
}

impl Site {
    pub fn new(pages: Vec<Page>) -> Self {
        Site { pages }
    }

    pub fn add(&mut self, page: Page) {
        self.pages.retain(|p| !same_url(&p.url, &page.url));
        self.pages.push(page);
    }

    pub fn page(&self, url: &str) -> Option<&Page> {
        self.pages.iter().find(|p| same_url(&p.url, url))
    }

    pub fn pages(&self) -> &[Page] {
        &self.pages
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tab {
    history: Vec<Page>,
    position: usize,
}

impl Tab {
    fn new(page: Page) -> Self {
        Tab {
            history: vec![page],
            position: 0,
        }
    }

    pub fn page(&self) -> &Page {
        &self.history[self.position]
    }

    fn page_mut(&mut self) -> &mut Page {
        &mut self.history[self.position]
    }

    fn navigate(&mut self, page: Page) {
        self.history.truncate(self.position + 1);
        self.history.push(page);
        self.position += 1;
    }

    pub fn can_go_back(&self) -> bool {
        self.position > 0
    }

    pub fn can_go_forward(&self) -> bool {
        self.position + 1 < self.history.len()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct StatusError(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct BrowserState {
    tabs: Vec<Tab>,
    active: usize,
    pub message_to_user: Option<String>,
    pub episode: EpisodeStatus,
    /// Actions the simulator accepted without modelling their effect.
    pub trace: Vec<String>,
    site: Arc<Site>,
}

impl BrowserState {
    pub fn new(site: Arc<Site>) -> Self {
        BrowserState {
            tabs: vec![Tab::new(Page::blank())],
            active: 0,
            message_to_user: None,
            episode: EpisodeStatus::Running,
            trace: Vec::new(),
            site,
        }
    }

    /// Starts with `url` already loaded.
    pub fn open(site: Arc<Site>, url: &str) -> Result<Self, StatusError> {
        let page = site
            .page(url)
            .cloned()
            .ok_or_else(|| StatusError(format!("no page at {url}")))?;
        let mut state = Self::new(site);
        state.tabs[0] = Tab::new(page);
        Ok(state)
    }

    pub fn page(&self) -> &Page {
        self.tabs[self.active].page()
    }

    pub fn url(&self) -> &str {
        &self.page().url
    }

    pub fn tabs(&self) -> &[Tab] {
        &self.tabs
    }

    pub fn active_tab(&self) -> usize {
        self.active
    }

    pub fn site(&self) -> &Arc<Site> {
        &self.site
    }

    fn tab_mut(&mut self) -> &mut Tab {
        &mut self.tabs[self.active]
    }

    fn page_mut(&mut self) -> &mut Page {
        self.tab_mut().page_mut()
    }

    fn load(&self, url: &str) -> Result<Page, StatusError> {
        if url == BLANK_URL {
            return Ok(Page::blank());
        }
        self.site
            .page(url)
            .cloned()
            .ok_or_else(|| StatusError(format!("no page at {url}")))
    }
}

fn no_element(bid: &str) -> StatusError {
    StatusError(format!("no element with bid {bid}"))
}

fn require<'a>(page: &'a Page, bid: &str) -> Result<&'a Node, StatusError> {
    page.find(bid).ok_or_else(|| no_element(bid))
}

fn require_role(page: &Page, bid: &str, roles: &[&str], action: &str) -> Result<(), StatusError> {
    let node = require(page, bid)?;
    if roles.contains(&node.role.as_str()) {
        Ok(())
    } else {
        Err(StatusError(format!(
            "cannot {action} element {bid}: role {} is not one of {}",
            node.role,
            roles.join(", ")
        )))
    }
}

fn visible_mut<'a>(page: &'a mut Page, bid: &str) -> Result<&'a mut Node, StatusError> {
    if page.find(bid).is_none() {
        return Err(no_element(bid));
    }
    Ok(page.find_any_mut(bid).expect("visible node exists"))
}

const TEXT_ROLES: &[&str] = &["textbox", "searchbox", "combobox"];
const TOGGLE_ROLES: &[&str] = &["checkbox", "radio"];
const SELECT_ROLES: &[&str] = &["select", "combobox", "listbox"];

fn record(state: &mut BrowserState, cmd: &Command) {
    state.trace.push(describe(cmd));
}

fn describe(cmd: &Command) -> String {
    let n = |v: f64| format_number(v);
    match cmd {
        Command::Scroll { delta_x, delta_y } => format!("scroll {} {}", n(*delta_x), n(*delta_y)),
        Command::MouseMove { x, y } => format!("mouse_move {} {}", n(*x), n(*y)),
        Command::MouseUp { x, y, button } => format!("mouse_up {} {} {button}", n(*x), n(*y)),
        Command::MouseDown { x, y, button } => format!("mouse_down {} {} {button}", n(*x), n(*y)),
        Command::MouseClick { x, y, button } => format!("mouse_click {} {} {button}", n(*x), n(*y)),
        Command::MouseDblclick { x, y, button } => format!("mouse_dblclick {} {} {button}", n(*x), n(*y)),
        Command::MouseDragAndDrop { from_x, from_y, to_x, to_y } => {
            format!("mouse_drag_and_drop {} {} {} {}", n(*from_x), n(*from_y), n(*to_x), n(*to_y))
        }
        Command::MouseUploadFile { x, y, files } => format!("mouse_upload_file {} {} {}", n(*x), n(*y), files.join(",")),
        Command::KeyboardPress { key } => format!("keyboard_press {key}"),
        Command::KeyboardUp { key } => format!("keyboard_up {key}"),
        Command::KeyboardDown { key } => format!("keyboard_down {key}"),
        Command::KeyboardType { text } => format!("keyboard_type {text}"),
        Command::KeyboardInsertText { text } => format!("keyboard_insert_text {text}"),
        Command::Hover { bid } => format!("hover {bid}"),
        Command::Press { bid, key_comb } => format!("press {bid} {key_comb}"),
        Command::DragAndDrop { from_bid, to_bid } => format!("drag_and_drop {from_bid} {to_bid}"),
        Command::UploadFile { bid, files } => format!("upload_file {bid} {}", files.join(",")),
        Command::GoBack => "go_back (no history)".into(),
        Command::GoForward => "go_forward (no history)".into(),
        other => format!("{other:?}"),
    }
}

fn conditions_hold(page: &Page, conds: &[Condition]) -> bool {
    conds.iter().all(|c| match page.find_any(&c.bid) {
        None => false,
        Some(node) => {
            c.value.as_ref().map_or(true, |v| node.value.as_deref().unwrap_or("") == v)
                && c.checked.map_or(true, |want| node.checked.unwrap_or(false) == want)
        }
    })
}

fn click(state: &mut BrowserState, bid: &str) -> Result<(), StatusError> {
    let node = require(state.page(), bid)?.clone();
    {
        let page = state.page_mut();
        page.focused = Some(bid.to_string());
        if TOGGLE_ROLES.contains(&node.role.as_str()) {
            let target = page.find_any_mut(bid).expect("node exists");
            target.checked = Some(if node.role == "radio" { true } else { !node.checked.unwrap_or(false) });
        }
    }
    let effects: Vec<Effect> = state
        .page()
        .effects
        .iter()
        .filter(|e| e.on_click == bid && conditions_hold(state.page(), &e.when))
        .cloned()
        .collect();
    let mut navigate_to = node.href.clone();
    for effect in effects {
        let page = state.page_mut();
        for b in &effect.reveal {
            if let Some(n) = page.find_any_mut(b) {
                n.hidden = false;
            }
        }
        for b in &effect.hide {
            if let Some(n) = page.find_any_mut(b) {
                n.hidden = true;
            }
        }
        for s in &effect.set_name {
            if let Some(n) = page.find_any_mut(&s.bid) {
                n.name = s.text.clone();
            }
        }
        for s in &effect.set_value {
            if let Some(n) = page.find_any_mut(&s.bid) {
                n.value = Some(s.text.clone());
            }
        }
        if effect.navigate.is_some() {
            navigate_to = effect.navigate.clone();
        }
    }
    if let Some(focused) = state.page().focused.clone() {
        if state.page().find(&focused).is_none() {
            state.page_mut().focused = None;
        }
    }
    if let Some(url) = navigate_to {
        let page = state.load(&url)?;
        state.tab_mut().navigate(page);
    }
    Ok(())
}

/// Applies one validated command. The input state is never modified.
pub fn sim_execute(state: &BrowserState, cmd: &Command) -> Result<BrowserState, StatusError> {
    let mut next = state.clone();
    match cmd {
        Command::Noop { .. } => return Ok(next),
        Command::SendMsgToUser { text } => {
            next.message_to_user = Some(text.clone());
            next.episode = EpisodeStatus::Answered;
        }
        Command::ReportInfeasible { reason } => {
            next.message_to_user = Some(reason.clone());
            next.episode = EpisodeStatus::Infeasible;
        }
        Command::Fill { bid, value } => {
            require_role(next.page(), bid, TEXT_ROLES, "fill")?;
            let page = next.page_mut();
            visible_mut(page, bid)?.value = Some(value.clone());
            page.focused = Some(bid.clone());
        }
        Command::Clear { bid } => {
            require_role(next.page(), bid, TEXT_ROLES, "clear")?;
            let page = next.page_mut();
            visible_mut(page, bid)?.value = Some(String::new());
            page.focused = Some(bid.clone());
        }
        Command::Check { bid } | Command::Uncheck { bid } => {
            let want = matches!(cmd, Command::Check { .. });
            require_role(next.page(), bid, TOGGLE_ROLES, if want { "check" } else { "uncheck" })?;
            visible_mut(next.page_mut(), bid)?.checked = Some(want);
        }
        Command::SelectOption { bid, options } => {
            require_role(next.page(), bid, SELECT_ROLES, "select options of")?;
            let node = visible_mut(next.page_mut(), bid)?;
            if let Some(bad) = options.iter().find(|o| !node.options.is_empty() && !node.options.contains(o)) {
                return Err(StatusError(format!("element {bid} has no option {bad:?}")));
            }
            node.value = Some(options.join(", "));
        }
        Command::Click { bid, .. } | Command::Dblclick { bid, .. } => click(&mut next, bid)?,
        Command::Focus { bid } => {
            require(next.page(), bid)?;
            next.page_mut().focused = Some(bid.clone());
        }
        Command::Press { bid, .. } => {
            require(next.page(), bid)?;
            next.page_mut().focused = Some(bid.clone());
            record(&mut next, cmd);
        }
        Command::Hover { bid } | Command::UploadFile { bid, .. } => {
            require(next.page(), bid)?;
            record(&mut next, cmd);
        }
        Command::DragAndDrop { from_bid, to_bid } => {
            require(next.page(), from_bid)?;
            require(next.page(), to_bid)?;
            record(&mut next, cmd);
        }
        Command::Scroll { .. }
        | Command::MouseMove { .. }
        | Command::MouseUp { .. }
        | Command::MouseDown { .. }
        | Command::MouseClick { .. }
        | Command::MouseDblclick { .. }
        | Command::MouseDragAndDrop { .. }
        | Command::MouseUploadFile { .. }
        | Command::KeyboardPress { .. }
        | Command::KeyboardUp { .. }
        | Command::KeyboardDown { .. }
        | Command::KeyboardType { .. }
        | Command::KeyboardInsertText { .. } => record(&mut next, cmd),
        Command::Goto { url } => {
            let page = next.load(url)?;
            next.tab_mut().navigate(page);
        }
        Command::GoBack => {
            let tab = next.tab_mut();
            if tab.can_go_back() {
                tab.position -= 1;
            } else {
                record(&mut next, cmd);
            }
        }
        Command::GoForward => {
            let tab = next.tab_mut();
            if tab.can_go_forward() {
                tab.position += 1;
            } else {
                record(&mut next, cmd);
            }
        }
        Command::NewTab => {
            next.tabs.push(Tab::new(Page::blank()));
            next.active = next.tabs.len() - 1;
        }
        Command::TabClose => {
            next.tabs.remove(next.active);
            if next.tabs.is_empty() {
                next.tabs.push(Tab::new(Page::blank()));
            }
            next.active = next.active.min(next.tabs.len() - 1);
        }
        Command::TabFocus { index } => {
            let idx = usize::try_from(*index)
                .ok()
                .filter(|i| *i < next.tabs.len())
                .ok_or_else(|| StatusError(format!("no tab with index {index}; {} tab(s) open", next.tabs.len())))?;
            next.active = idx;
        }
    }
    Ok(next)
}

/// Result of running a program: the state after the last successful call.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramOutcome {
    pub state: BrowserState,
    pub executed: usize,
    pub error: Option<String>,
}

/// Typechecks and executes calls in order, stopping at the first failure.
pub fn run_program(state: &BrowserState, program: &ActionProgram, subset: &ActionSubset) -> ProgramOutcome {
    let mut current = state.clone();
    for (i, call) in program.calls.iter().enumerate() {
        let step = typecheck_call(call, subset)
            .map_err(|e| e.to_string())
            .and_then(|cmd| sim_execute(&current, &cmd).map_err(|e| e.to_string()));
        match step {
            Ok(next) => current = next,
            Err(error) => {
                return ProgramOutcome {
                    state: current,
                    executed: i,
                    error: Some(format!("{call}: {error}")),
                }
            }
        }
    }
    ProgramOutcome {
        state: current,
        executed: program.calls.len(),
        error: None,
    }
}
