//! The browsing action language and its simulated page environment.

mod fixture;
mod parser;
mod primitives;
mod render;
mod sim;
mod typecheck;

pub mod prompt;

pub use prompt::action_space_description;

pub use fixture::{builtin_site, load_page, load_site_dir, parse_page, ultimate_answer_site, FixtureError};
pub use parser::{parse_action_program, parse_call, parse_value, quote, ActionProgram, BrowseCall, ParseError, Value};
pub use primitives::{Group, Param, ParamType, Primitive, Signature, MODIFIERS, MOUSE_BUTTONS, PROMPT_ORDER};
pub use render::{render_observation, render_page};
pub use sim::{
    run_program, sim_execute, BrowserState, Condition, Effect, Node, Page, ProgramOutcome, SetText, Site, StatusError,
    Tab, BLANK_URL,
};
pub use typecheck::{typecheck_call, ActionSubset, Command, TypecheckError};
