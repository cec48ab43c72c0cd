use std::collections::BTreeSet;

use super::parser::{parse_value, BrowseCall, Value};
use super::primitives::{Group, ParamType, Primitive};

/// Which primitives a benchmark or agent allows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSubset {
    enabled: BTreeSet<Primitive>,
}

impl ActionSubset {
    pub fn all() -> Self {
        ActionSubset {
            enabled: Primitive::ALL.iter().copied().collect(),
        }
    }

    /// `noop` plus every primitive belonging to one of `groups`.
    pub fn from_groups(groups: &[Group]) -> Self {
        let enabled = Primitive::ALL
            .iter()
            .copied()
            .filter(|p| *p == Primitive::Noop || p.signature().groups.iter().any(|g| groups.contains(g)))
            .collect();
        ActionSubset { enabled }
    }

    pub fn from_primitives(prims: impl IntoIterator<Item = Primitive>) -> Self {
        ActionSubset {
            enabled: prims.into_iter().collect(),
        }
    }

    /// The sixteen actions offered by the browsing agent.
    pub fn browsing_default() -> Self {
        use Primitive as P;
        Self::from_primitives([
            P::Noop,
            P::SendMsgToUser,
            P::Scroll,
            P::Fill,
            P::SelectOption,
            P::Click,
            P::Dblclick,
            P::Hover,
            P::Press,
            P::Focus,
            P::Clear,
            P::DragAndDrop,
            P::UploadFile,
            P::GoBack,
            P::GoForward,
            P::Goto,
        ])
    }

    pub fn element_only() -> Self {
        Self::from_groups(&[Group::Element])
    }

    pub fn contains(&self, p: Primitive) -> bool {
        self.enabled.contains(&p)
    }

    pub fn len(&self) -> usize {
        self.enabled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.enabled.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Primitive> + '_ {
        self.enabled.iter().copied()
    }
}

impl Default for ActionSubset {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TypecheckError {
    #[error("action {0} is not enabled")]
    DisabledAction(String),
    #[error("{primitive}: argument '{param}' expected {expected}, got {got}; signature is {signature}")]
    TypeError {
        primitive: String,
        param: String,
        expected: String,
        got: String,
        signature: String,
    },
}

/// A call with every argument bound, defaulted and type-checked.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Noop { wait_ms: f64 },
    SendMsgToUser { text: String },
    ReportInfeasible { reason: String },
    Fill { bid: String, value: String },
    Check { bid: String },
    Uncheck { bid: String },
    SelectOption { bid: String, options: Vec<String> },
    Click { bid: String, button: String, modifiers: Vec<String> },
    Dblclick { bid: String, button: String, modifiers: Vec<String> },
    Hover { bid: String },
    Press { bid: String, key_comb: String },
    Focus { bid: String },
    Clear { bid: String },
    DragAndDrop { from_bid: String, to_bid: String },
    Scroll { delta_x: f64, delta_y: f64 },
    MouseMove { x: f64, y: f64 },
    MouseUp { x: f64, y: f64, button: String },
    MouseDown { x: f64, y: f64, button: String },
    MouseClick { x: f64, y: f64, button: String },
    MouseDblclick { x: f64, y: f64, button: String },
    MouseDragAndDrop { from_x: f64, from_y: f64, to_x: f64, to_y: f64 },
    KeyboardPress { key: String },
    KeyboardUp { key: String },
    KeyboardDown { key: String },
    KeyboardType { text: String },
    KeyboardInsertText { text: String },
    Goto { url: String },
    GoBack,
    GoForward,
    NewTab,
    TabClose,
    TabFocus { index: i64 },
    UploadFile { bid: String, files: Vec<String> },
    MouseUploadFile { x: f64, y: f64, files: Vec<String> },
}

/// Checked argument, in signature order.
enum Arg {
    S(String),
    F(f64),
    I(i64),
    L(Vec<String>),
}

impl Arg {
    fn s(self) -> String {
        match self {
            Arg::S(s) => s,
            _ => unreachable!("signature table and Command disagree"),
        }
    }
    fn f(self) -> f64 {
        match self {
            Arg::F(f) => f,
            _ => unreachable!("signature table and Command disagree"),
        }
    }
    fn i(self) -> i64 {
        match self {
            Arg::I(i) => i,
            _ => unreachable!("signature table and Command disagree"),
        }
    }
    fn l(self) -> Vec<String> {
        match self {
            Arg::L(l) => l,
            _ => unreachable!("signature table and Command disagree"),
        }
    }
}

fn check_value(ty: ParamType, v: &Value) -> Option<Arg> {
    let strs = |items: &[Value]| -> Option<Vec<String>> {
        items
            .iter()
            .map(|i| match i {
                Value::Str(s) => Some(s.clone()),
                _ => None,
            })
            .collect()
    };
    match (ty, v) {
        (ParamType::Str, Value::Str(s)) => Some(Arg::S(s.clone())),
        (ParamType::Float, Value::Num(n)) => Some(Arg::F(*n)),
        (ParamType::Int, Value::Num(n)) if n.fract() == 0.0 && n.abs() < 9.0e15 => Some(Arg::I(*n as i64)),
        (ParamType::StrOrStrList, Value::Str(s)) => Some(Arg::L(vec![s.clone()])),
        (ParamType::StrOrStrList, Value::List(items)) => strs(items).map(Arg::L),
        (ParamType::Enum(allowed), Value::Str(s)) if allowed.contains(&s.as_str()) => Some(Arg::S(s.clone())),
        (ParamType::EnumList(allowed), Value::List(items)) => {
            let list = strs(items)?;
            list.iter().all(|s| allowed.contains(&s.as_str())).then_some(Arg::L(list))
        }
        _ => None,
    }
}

pub fn typecheck_call(call: &BrowseCall, subset: &ActionSubset) -> Result<Command, TypecheckError> {
    let p = call.primitive;
    if !subset.contains(p) {
        return Err(TypecheckError::DisabledAction(p.name().to_string()));
    }
    let sig = p.signature();
    let mut args = Vec::with_capacity(sig.params.len());
    for (i, param) in sig.params.iter().enumerate() {
        let supplied = call
            .args
            .get(i)
            .cloned()
            .or_else(|| call.kwargs.iter().find(|(k, _)| k == param.name).map(|(_, v)| v.clone()));
        let value = match (supplied, param.default) {
            (Some(v), _) => v,
            (None, Some(d)) => parse_value(d).expect("signature defaults are valid literals"),
            (None, None) => {
                return Err(TypecheckError::TypeError {
                    primitive: p.name().into(),
                    param: param.name.into(),
                    expected: param.ty.to_string(),
                    got: "nothing".into(),
                    signature: sig.display(),
                })
            }
        };
        match check_value(param.ty, &value) {
            Some(arg) => args.push(arg),
            None => {
                return Err(TypecheckError::TypeError {
                    primitive: p.name().into(),
                    param: param.name.into(),
                    expected: param.ty.to_string(),
                    got: value.to_string(),
                    signature: sig.display(),
                })
            }
        }
    }
    Ok(build(p, args))
}

fn build(p: Primitive, args: Vec<Arg>) -> Command {
    let mut it = args.into_iter();
    let mut next = move || it.next().expect("arity checked");
    use Primitive as P;
    match p {
        P::Noop => Command::Noop { wait_ms: next().f() },
        P::SendMsgToUser => Command::SendMsgToUser { text: next().s() },
        P::ReportInfeasible => Command::ReportInfeasible { reason: next().s() },
        P::Fill => Command::Fill { bid: next().s(), value: next().s() },
        P::Check => Command::Check { bid: next().s() },
        P::Uncheck => Command::Uncheck { bid: next().s() },
        P::SelectOption => Command::SelectOption { bid: next().s(), options: next().l() },
        P::Click => Command::Click { bid: next().s(), button: next().s(), modifiers: next().l() },
        P::Dblclick => Command::Dblclick { bid: next().s(), button: next().s(), modifiers: next().l() },
        P::Hover => Command::Hover { bid: next().s() },
        P::Press => Command::Press { bid: next().s(), key_comb: next().s() },
        P::Focus => Command::Focus { bid: next().s() },
        P::Clear => Command::Clear { bid: next().s() },
        P::DragAndDrop => Command::DragAndDrop { from_bid: next().s(), to_bid: next().s() },
        P::Scroll => Command::Scroll { delta_x: next().f(), delta_y: next().f() },
        P::MouseMove => Command::MouseMove { x: next().f(), y: next().f() },
        P::MouseUp => Command::MouseUp { x: next().f(), y: next().f(), button: next().s() },
        P::MouseDown => Command::MouseDown { x: next().f(), y: next().f(), button: next().s() },
        P::MouseClick => Command::MouseClick { x: next().f(), y: next().f(), button: next().s() },
        P::MouseDblclick => Command::MouseDblclick { x: next().f(), y: next().f(), button: next().s() },
        P::MouseDragAndDrop => Command::MouseDragAndDrop {
            from_x: next().f(),
            from_y: next().f(),
            to_x: next().f(),
            to_y: next().f(),
        },
        P::KeyboardPress => Command::KeyboardPress { key: next().s() },
        P::KeyboardUp => Command::KeyboardUp { key: next().s() },
        P::KeyboardDown => Command::KeyboardDown { key: next().s() },
        P::KeyboardType => Command::KeyboardType { text: next().s() },
        P::KeyboardInsertText => Command::KeyboardInsertText { text: next().s() },
        P::Goto => Command::Goto { url: next().s() },
        P::GoBack => Command::GoBack,
        P::GoForward => Command::GoForward,
        P::NewTab => Command::NewTab,
        P::TabClose => Command::TabClose,
        P::TabFocus => Command::TabFocus { index: next().i() },
        P::UploadFile => Command::UploadFile { bid: next().s(), files: next().l() },
        P::MouseUploadFile => Command::MouseUploadFile { x: next().f(), y: next().f(), files: next().l() },
    }
}
