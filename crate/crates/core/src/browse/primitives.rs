//! Signature table of the browsing primitives.
//!
//! The parser, the typechecker and the browsing agent's action-space prompt
//! all read this table.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MOUSE_BUTTONS: &[&str] = &["left", "middle", "right"];
pub const MODIFIERS: &[&str] = &["Alt", "Control", "Meta", "Shift"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    Str,
    Float,
    Int,
    StrOrStrList,
    Enum(&'static [&'static str]),
    EnumList(&'static [&'static str]),
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let quoted = |vals: &[&str]| {
            vals.iter()
                .map(|v| format!("'{v}'"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        match self {
            ParamType::Str => f.write_str("str"),
            ParamType::Float => f.write_str("float"),
            ParamType::Int => f.write_str("int"),
            ParamType::StrOrStrList => f.write_str("str | list[str]"),
            ParamType::Enum(vals) => write!(f, "Literal[{}]", quoted(vals)),
            ParamType::EnumList(vals) => write!(f, "list[typing.Literal[{}]]", quoted(vals)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Param {
    pub name: &'static str,
    pub ty: ParamType,
    /// Default value as a DSL literal.
    pub default: Option<&'static str>,
}

const fn req(name: &'static str, ty: ParamType) -> Param {
    Param { name, ty, default: None }
}

const fn opt(name: &'static str, ty: ParamType, default: &'static str) -> Param {
    Param {
        name,
        ty,
        default: Some(default),
    }
}

/// Named groups used to enable subsets of the action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Chat,
    Infeasible,
    Element,
    Coordinate,
    Navigation,
    Tab,
}

macro_rules! primitives {
    ($( $variant:ident => $name:literal ),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Primitive { $( $variant ),* }

        impl Primitive {
            pub const ALL: &'static [Primitive] = &[ $( Primitive::$variant ),* ];

            pub fn name(self) -> &'static str {
                match self { $( Primitive::$variant => $name ),* }
            }

            pub fn from_name(name: &str) -> Option<Primitive> {
                match name { $( $name => Some(Primitive::$variant), )* _ => None }
            }
        }
    };
}

primitives! {
    Noop => "noop",
    SendMsgToUser => "send_msg_to_user",
    ReportInfeasible => "report_infeasible",
    Fill => "fill",
    Check => "check",
    Uncheck => "uncheck",
    SelectOption => "select_option",
    Click => "click",
    Dblclick => "dblclick",
    Hover => "hover",
    Press => "press",
    Focus => "focus",
    Clear => "clear",
    DragAndDrop => "drag_and_drop",
    Scroll => "scroll",
    MouseMove => "mouse_move",
    MouseUp => "mouse_up",
    MouseDown => "mouse_down",
    MouseClick => "mouse_click",
    MouseDblclick => "mouse_dblclick",
    MouseDragAndDrop => "mouse_drag_and_drop",
    KeyboardPress => "keyboard_press",
    KeyboardUp => "keyboard_up",
    KeyboardDown => "keyboard_down",
    KeyboardType => "keyboard_type",
    KeyboardInsertText => "keyboard_insert_text",
    Goto => "goto",
    GoBack => "go_back",
    GoForward => "go_forward",
    NewTab => "new_tab",
    TabClose => "tab_close",
    TabFocus => "tab_focus",
    UploadFile => "upload_file",
    MouseUploadFile => "mouse_upload_file",
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub struct Signature {
    pub primitive: Primitive,
    pub params: &'static [Param],
    pub groups: &'static [Group],
    pub summary: &'static str,
    pub examples: &'static [&'static str],
}

impl Signature {
    pub fn param(&self, name: &str) -> Option<(usize, &Param)> {
        self.params.iter().enumerate().find(|(_, p)| p.name == name)
    }

    /// `click(bid: str, button: Literal['left', 'middle', 'right'] = 'left', ...)`
    pub fn display(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| match p.default {
                Some(d) => format!("{}: {} = {}", p.name, p.ty, d),
                None => format!("{}: {}", p.name, p.ty),
            })
            .collect();
        format!("{}({})", self.primitive.name(), params.join(", "))
    }
}

use Group::*;
use ParamType::*;

const BUTTON: Param = opt("button", Enum(MOUSE_BUTTONS), "'left'");
const MODS: Param = opt("modifiers", EnumList(MODIFIERS), "[]");

static TABLE: &[Signature] = &[
    Signature {
        primitive: Primitive::Noop,
        params: &[opt("wait_ms", Float, "1000")],
        groups: &[],
        summary: "Do nothing, and optionally wait for the given time (in milliseconds).",
        examples: &["noop()", "noop(500)"],
    },
    Signature {
        primitive: Primitive::SendMsgToUser,
        params: &[req("text", Str)],
        groups: &[Chat],
        summary: "Sends a message to the user.",
        examples: &["send_msg_to_user('Based on the results of my search, the city was built in 1751.')"],
    },
    Signature {
        primitive: Primitive::ReportInfeasible,
        params: &[req("reason", Str)],
        groups: &[Infeasible],
        summary: "Notifies the user that their instructions are infeasible.",
        examples: &["report_infeasible('I cannot follow these instructions because there is no email field in this form.')"],
    },
    Signature {
        primitive: Primitive::Fill,
        params: &[req("bid", Str), req("value", Str)],
        groups: &[Element],
        summary: "Fill out a form field.",
        examples: &[
            "fill('237', 'example value')",
            "fill('45', 'multi-line\\nexample')",
            "fill('a12', 'example with \"quotes\"')",
        ],
    },
    Signature {
        primitive: Primitive::Check,
        params: &[req("bid", Str)],
        groups: &[Element],
        summary: "Ensure a checkbox or radio element is checked.",
        examples: &["check('55')"],
    },
    Signature {
        primitive: Primitive::Uncheck,
        params: &[req("bid", Str)],
        groups: &[Element],
        summary: "Ensure a checkbox or radio element is unchecked.",
        examples: &["uncheck('a5289')"],
    },
    Signature {
        primitive: Primitive::SelectOption,
        params: &[req("bid", Str), req("options", StrOrStrList)],
        groups: &[Element],
        summary: "Select one or multiple options in a <select> element.",
        examples: &["select_option('a48', 'blue')", "select_option('c48', ['red', 'green', 'blue'])"],
    },
    Signature {
        primitive: Primitive::Click,
        params: &[req("bid", Str), BUTTON, MODS],
        groups: &[Element],
        summary: "Click an element.",
        examples: &["click('a51')", "click('b22', button='right')", "click('48', button='middle', modifiers=['Shift'])"],
    },
    Signature {
        primitive: Primitive::Dblclick,
        params: &[req("bid", Str), BUTTON, MODS],
        groups: &[Element],
        summary: "Double click an element.",
        examples: &["dblclick('12')", "dblclick('ca42', button='right')", "dblclick('178', button='middle', modifiers=['Shift'])"],
    },
    Signature {
        primitive: Primitive::Hover,
        params: &[req("bid", Str)],
        groups: &[Element],
        summary: "Hover over an element.",
        examples: &["hover('b8')"],
    },
    Signature {
        primitive: Primitive::Press,
        params: &[req("bid", Str), req("key_comb", Str)],
        groups: &[Element],
        summary: "Focus the matching element and press a combination of keys.",
        examples: &["press('88', 'Backspace')", "press('a26', 'Control+a')", "press('a61', 'Meta+Shift+t')"],
    },
    Signature {
        primitive: Primitive::Focus,
        params: &[req("bid", Str)],
        groups: &[Element],
        summary: "Focus the matching element.",
        examples: &["focus('b455')"],
    },
    Signature {
        primitive: Primitive::Clear,
        params: &[req("bid", Str)],
        groups: &[Element],
        summary: "Clear the input field.",
        examples: &["clear('996')"],
    },
    Signature {
        primitive: Primitive::DragAndDrop,
        params: &[req("from_bid", Str), req("to_bid", Str)],
        groups: &[Element],
        summary: "Perform a drag & drop.",
        examples: &["drag_and_drop('56', '498')"],
    },
    Signature {
        primitive: Primitive::Scroll,
        params: &[req("delta_x", Float), req("delta_y", Float)],
        groups: &[Element, Coordinate],
        summary: "Scroll horizontally and vertically, in pixels.",
        examples: &["scroll(0, 200)", "scroll(-50.2, -100.5)"],
    },
    Signature {
        primitive: Primitive::MouseMove,
        params: &[req("x", Float), req("y", Float)],
        groups: &[Coordinate],
        summary: "Move the mouse to a location.",
        examples: &["mouse_move(65.2, 158.5)"],
    },
    Signature {
        primitive: Primitive::MouseUp,
        params: &[req("x", Float), req("y", Float), BUTTON],
        groups: &[Coordinate],
        summary: "Move the mouse to a location then release a mouse button.",
        examples: &["mouse_up(250, 120)", "mouse_up(47, 252, 'right')"],
    },
    Signature {
        primitive: Primitive::MouseDown,
        params: &[req("x", Float), req("y", Float), BUTTON],
        groups: &[Coordinate],
        summary: "Move the mouse to a location then press and hold a mouse button.",
        examples: &["mouse_down(140.2, 580.1)", "mouse_down(458, 254.5, 'middle')"],
    },
    Signature {
        primitive: Primitive::MouseClick,
        params: &[req("x", Float), req("y", Float), BUTTON],
        groups: &[Coordinate],
        summary: "Move the mouse to a location and click a mouse button.",
        examples: &["mouse_click(887.2, 68)", "mouse_click(56, 712.56, 'right')"],
    },
    Signature {
        primitive: Primitive::MouseDblclick,
        params: &[req("x", Float), req("y", Float), BUTTON],
        groups: &[Coordinate],
        summary: "Move the mouse to a location and double click a mouse button.",
        examples: &["mouse_dblclick(5, 236)", "mouse_dblclick(87.5, 354, 'right')"],
    },
    Signature {
        primitive: Primitive::MouseDragAndDrop,
        params: &[req("from_x", Float), req("from_y", Float), req("to_x", Float), req("to_y", Float)],
        groups: &[Coordinate],
        summary: "Drag and drop from a location to a location.",
        examples: &["mouse_drag_and_drop(10.7, 325, 235.6, 24.54)"],
    },
    Signature {
        primitive: Primitive::KeyboardPress,
        params: &[req("key", Str)],
        groups: &[Coordinate],
        summary: "Press a combination of keys.",
        examples: &["keyboard_press('Backspace')", "keyboard_press('Control+a')", "keyboard_press('Meta+Shift+t')"],
    },
    Signature {
        primitive: Primitive::KeyboardUp,
        params: &[req("key", Str)],
        groups: &[Coordinate],
        summary: "Release a keyboard key.",
        examples: &["keyboard_up('Shift')", "keyboard_up('c')"],
    },
    Signature {
        primitive: Primitive::KeyboardDown,
        params: &[req("key", Str)],
        groups: &[Coordinate],
        summary: "Press and hold a keyboard key.",
        examples: &["keyboard_down('Shift')", "keyboard_down('c')"],
    },
    Signature {
        primitive: Primitive::KeyboardType,
        params: &[req("text", Str)],
        groups: &[Coordinate],
        summary: "Types a string of text through the keyboard.",
        examples: &["keyboard_type('Hello world!')"],
    },
    Signature {
        primitive: Primitive::KeyboardInsertText,
        params: &[req("text", Str)],
        groups: &[Coordinate],
        summary: "Insert a string of text in the currently focused element.",
        examples: &["keyboard_insert_text('Hello world!')"],
    },
    Signature {
        primitive: Primitive::Goto,
        params: &[req("url", Str)],
        groups: &[Navigation],
        summary: "Navigate to a url.",
        examples: &["goto('http://www.example.com')"],
    },
    Signature {
        primitive: Primitive::GoBack,
        params: &[],
        groups: &[Navigation],
        summary: "Navigate to the previous page in history.",
        examples: &["go_back()"],
    },
    Signature {
        primitive: Primitive::GoForward,
        params: &[],
        groups: &[Navigation],
        summary: "Navigate to the next page in history.",
        examples: &["go_forward()"],
    },
    Signature {
        primitive: Primitive::NewTab,
        params: &[],
        groups: &[Tab],
        summary: "Open a new tab. It will become the active one.",
        examples: &["new_tab()"],
    },
    Signature {
        primitive: Primitive::TabClose,
        params: &[],
        groups: &[Tab],
        summary: "Close the current tab.",
        examples: &["tab_close()"],
    },
    Signature {
        primitive: Primitive::TabFocus,
        params: &[req("index", Int)],
        groups: &[Tab],
        summary: "Bring tab to front (activate tab).",
        examples: &["tab_focus(2)"],
    },
    Signature {
        primitive: Primitive::UploadFile,
        params: &[req("bid", Str), req("file", StrOrStrList)],
        groups: &[Element],
        summary: "Click an element and select one or multiple input files for upload.",
        examples: &[
            "upload_file('572', 'my_receipt.pdf')",
            "upload_file('63', ['/home/bob/Documents/image.jpg', '/home/bob/Documents/file.zip'])",
        ],
    },
    Signature {
        primitive: Primitive::MouseUploadFile,
        params: &[req("x", Float), req("y", Float), req("file", StrOrStrList)],
        groups: &[Coordinate],
        summary: "Click a location and select one or multiple input files for upload.",
        examples: &[
            "mouse_upload_file(132.1, 547, 'my_receipt.pdf')",
            "mouse_upload_file(328, 812, ['/home/bob/Documents/image.jpg', '/home/bob/Documents/file.zip'])",
        ],
    },
];

impl Primitive {
    pub fn signature(self) -> &'static Signature {
        // TABLE is declared in enum order
        &TABLE[self as usize]
    }
}

/// Order in which primitives are listed in prompts: control first, then
/// element, coordinate, navigation and tab actions.
pub const PROMPT_ORDER: &[Primitive] = &[
    Primitive::Noop,
    Primitive::SendMsgToUser,
    Primitive::ReportInfeasible,
    Primitive::Scroll,
    Primitive::Fill,
    Primitive::SelectOption,
    Primitive::Click,
    Primitive::Dblclick,
    Primitive::Hover,
    Primitive::Press,
    Primitive::Focus,
    Primitive::Clear,
    Primitive::DragAndDrop,
    Primitive::UploadFile,
    Primitive::Check,
    Primitive::Uncheck,
    Primitive::MouseMove,
    Primitive::MouseUp,
    Primitive::MouseDown,
    Primitive::MouseClick,
    Primitive::MouseDblclick,
    Primitive::MouseDragAndDrop,
    Primitive::MouseUploadFile,
    Primitive::KeyboardDown,
    Primitive::KeyboardUp,
    Primitive::KeyboardPress,
    Primitive::KeyboardType,
    Primitive::KeyboardInsertText,
    Primitive::GoBack,
    Primitive::GoForward,
    Primitive::Goto,
    Primitive::TabClose,
    Primitive::TabFocus,
    Primitive::NewTab,
];
