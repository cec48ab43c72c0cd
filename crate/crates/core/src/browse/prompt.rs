//! Action-space description shown to the browsing agent.

use super::primitives::PROMPT_ORDER;
use super::typecheck::ActionSubset;

/// Lists every enabled primitive with its signature and examples.
pub fn action_space_description(subset: &ActionSubset) -> String {
    let enabled: Vec<_> = PROMPT_ORDER.iter().filter(|p| subset.contains(**p)).collect();
    let mut out = format!("{} different types of actions are available.\n", enabled.len());
    for p in enabled {
        let sig = p.signature();
        out.push('\n');
        out.push_str(&sig.display());
        out.push_str("\n    Examples:\n");
        let examples: Vec<String> = sig.examples.iter().map(|e| format!("        {e}\n")).collect();
        out.push_str(&examples.join("\n"));
    }
    out.push_str(
        "\nMultiple actions can be provided at once. Example:\n\
         fill('a12', 'example with \"quotes\"')\n\
         click('51')\n\
         click('48', button='middle', modifiers=['Shift'])\n\
         Multiple actions are meant to be executed sequentially without any feedback from the page.\n\
         Don't execute multiple actions at once if you need feedback from the page.\n",
    );
    out
}
