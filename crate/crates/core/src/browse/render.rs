use std::fmt::Write;

use super::parser::quote;
use super::sim::{BrowserState, Node, Page};

/// Accessibility-tree text of a page.
///
/// ```text
/// RootWebArea 'The Ultimate Answer', focused
/// 	[8] heading 'The Ultimate Answer'
/// 	[10] button 'Click me', clickable
/// ```
pub fn render_page(page: &Page) -> String {
    let mut out = format!("RootWebArea {}", quote(&page.title));
    if page.focused.is_none() {
        out.push_str(", focused");
    }
    for node in &page.nodes {
        render_node(&mut out, node, page.focused.as_deref(), 1);
    }
    out
}

fn render_node(out: &mut String, node: &Node, focused: Option<&str>, depth: usize) {
    if node.hidden {
        return;
    }
    out.push('\n');
    for _ in 0..depth {
        out.push('\t');
    }
    if let Some(bid) = &node.bid {
        let _ = write!(out, "[{bid}] ");
    }
    let _ = write!(out, "{} {}", node.role, quote(&node.name));
    if node.bid.is_some() && node.bid.as_deref() == focused {
        out.push_str(", focused");
    }
    if node.clickable {
        out.push_str(", clickable");
    }
    if let Some(checked) = node.checked {
        let _ = write!(out, ", checked='{checked}'");
    }
    if let Some(value) = &node.value {
        let _ = write!(out, ", value={}", quote(value));
    }
    for child in &node.children {
        render_node(out, child, focused, depth + 1);
    }
}

/// Observation of the active tab.
pub fn render_observation(state: &BrowserState) -> String {
    render_page(state.page())
}
