//! Line-oriented parser and canonical printer for browsing programs.
//!
//! A program is one call per line, e.g.
//!
//! ```text
//! fill('a12', 'example with "quotes"')
//! click('48', button="middle", modifiers=["Shift"])
//! ```
//!
//! Blank lines and lines starting with `#` are skipped. Strings take single
//! or double quotes with backslash escapes, numbers are decimals and lists
//! are bracketed. Arity and keyword names are checked here against the
//! signature table; value types are checked by the typechecker.

use std::fmt;

use super::primitives::{Primitive, Signature};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Num(f64),
    List(Vec<Value>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Str(_) => "str",
            Value::Num(_) => "number",
            Value::List(_) => "list",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => f.write_str(&quote(s)),
            Value::Num(n) => f.write_str(&format_number(*n)),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Python-style string literal: single quotes unless the text contains a
/// single quote and no double quote.
pub fn quote(s: &str) -> String {
    let delim = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(delim);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == delim => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(delim);
    out
}

pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

/// A parsed call. Arguments are kept as written so the program prints back
/// to the same text.
#[derive(Debug, Clone, PartialEq)]
pub struct BrowseCall {
    pub primitive: Primitive,
    pub args: Vec<Value>,
    pub kwargs: Vec<(String, Value)>,
}

impl BrowseCall {
    pub fn new(primitive: Primitive, args: Vec<Value>) -> Self {
        BrowseCall {
            primitive,
            args,
            kwargs: Vec::new(),
        }
    }

    pub fn signature(&self) -> &'static Signature {
        self.primitive.signature()
    }
}

impl fmt::Display for BrowseCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.primitive.name())?;
        let mut first = true;
        for arg in &self.args {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{arg}")?;
        }
        for (name, value) in &self.kwargs {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{name}={value}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionProgram {
    pub calls: Vec<BrowseCall>,
}

impl fmt::Display for ActionProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, call) in self.calls.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{call}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

pub fn parse_action_program(text: &str) -> Result<ActionProgram, ParseError> {
    let mut calls = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        calls.push(parse_line(line, idx + 1)?);
    }
    if calls.is_empty() {
        return Err(ParseError {
            line: 1,
            column: 1,
            message: "program contains no actions".into(),
        });
    }
    Ok(ActionProgram { calls })
}

/// Parses a single call such as `click('10')`.
pub fn parse_call(text: &str) -> Result<BrowseCall, ParseError> {
    parse_line(text, 1)
}

/// Parses one value literal, e.g. a signature default.
pub fn parse_value(text: &str) -> Result<Value, ParseError> {
    let mut p = LineParser::new(text, 1);
    p.skip_ws();
    let v = p.value()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(v)
}

fn parse_line(line: &str, line_no: usize) -> Result<BrowseCall, ParseError> {
    let mut p = LineParser::new(line, line_no);
    p.skip_ws();
    let name_col = p.column();
    let name = p.ident()?;
    let primitive = Primitive::from_name(&name).ok_or_else(|| ParseError {
        line: line_no,
        column: name_col,
        message: format!("unknown action '{name}'"),
    })?;
    p.skip_ws();
    p.expect('(')?;

    let mut args = Vec::new();
    let mut kwargs: Vec<(String, Value)> = Vec::new();
    p.skip_ws();
    if !p.eat(')') {
        loop {
            p.skip_ws();
            let arg_col = p.column();
            if let Some(key) = p.try_keyword() {
                p.skip_ws();
                let value = p.value()?;
                if kwargs.iter().any(|(k, _)| *k == key) {
                    return Err(p.error_at(arg_col, format!("duplicate keyword argument '{key}'")));
                }
                kwargs.push((key, value));
            } else {
                let value = p.value()?;
                if !kwargs.is_empty() {
                    return Err(p.error_at(arg_col, "positional argument follows keyword argument"));
                }
                args.push(value);
            }
            p.skip_ws();
            if p.eat(',') {
                p.skip_ws();
                // trailing comma
                if p.eat(')') {
                    break;
                }
                continue;
            }
            p.expect(')')?;
            break;
        }
    }
    p.skip_ws();
    if !p.at_end() {
        return Err(p.error("unexpected input after call"));
    }

    let call = BrowseCall { primitive, args, kwargs };
    check_arity(&call).map_err(|message| ParseError {
        line: line_no,
        column: name_col,
        message,
    })?;
    Ok(call)
}

fn check_arity(call: &BrowseCall) -> Result<(), String> {
    let sig = call.signature();
    let name = call.primitive.name();
    if call.args.len() > sig.params.len() {
        return Err(format!(
            "{name}() takes at most {} argument(s) but {} were given; expected {}",
            sig.params.len(),
            call.args.len(),
            sig.display()
        ));
    }
    let mut bound = vec![false; sig.params.len()];
    for slot in bound.iter_mut().take(call.args.len()) {
        *slot = true;
    }
    for (key, _) in &call.kwargs {
        match sig.param(key) {
            None => return Err(format!("{name}() got an unexpected keyword argument '{key}'")),
            Some((i, _)) if bound[i] => {
                return Err(format!("{name}() got multiple values for argument '{key}'"))
            }
            Some((i, _)) => bound[i] = true,
        }
    }
    for (param, is_bound) in sig.params.iter().zip(&bound) {
        if !is_bound && param.default.is_none() {
            return Err(format!(
                "{name}() missing required argument '{}'; expected {}",
                param.name,
                sig.display()
            ));
        }
    }
    Ok(())
}

struct LineParser<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    _src: &'a str,
}

impl<'a> LineParser<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        LineParser {
            chars: src.chars().collect(),
            pos: 0,
            line,
            _src: src,
        }
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        self.error_at(self.column(), message)
    }

    fn error_at(&self, column: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            let found = self.peek().map_or("end of line".to_string(), |f| format!("'{f}'"));
            Err(self.error(format!("expected '{c}', found {found}")))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        if start == self.pos || self.chars[start].is_ascii_digit() {
            self.pos = start;
            return Err(self.error("expected an action name"));
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    /// Consumes `name =` if present.
    fn try_keyword(&mut self) -> Option<String> {
        let start = self.pos;
        if !matches!(self.peek(), Some(c) if c.is_ascii_alphabetic() || c == '_') {
            return None;
        }
        let name = self.ident().ok()?;
        self.skip_ws();
        if self.eat('=') {
            Some(name)
        } else {
            self.pos = start;
            None
        }
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        match self.peek() {
            Some('\'') | Some('"') => self.string().map(Value::Str),
            Some('[') => self.list(),
            Some(c) if c == '-' || c == '+' || c == '.' || c.is_ascii_digit() => self.number(),
            Some(c) => Err(self.error(format!("unexpected '{c}', expected a value"))),
            None => Err(self.error("unexpected end of line, expected a value")),
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        let start_col = self.column();
        let delim = self.peek().expect("caller checked quote");
        self.pos += 1;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(self.error_at(start_col, "unterminated string literal")),
                Some(c) if c == delim => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        None => return Err(self.error_at(start_col, "unterminated string literal")),
                        Some(e) => {
                            self.pos += 1;
                            match e {
                                'n' => out.push('\n'),
                                't' => out.push('\t'),
                                'r' => out.push('\r'),
                                '\\' => out.push('\\'),
                                '\'' => out.push('\''),
                                '"' => out.push('"'),
                                // unknown escapes are kept verbatim
                                other => {
                                    out.push('\\');
                                    out.push(other);
                                }
                            }
                        }
                    }
                }
                Some(c) => {
                    self.pos += 1;
                    out.push(c);
                }
            }
        }
    }

    fn number(&mut self) -> Result<Value, ParseError> {
        let start = self.pos;
        let start_col = self.column();
        if matches!(self.peek(), Some('-') | Some('+')) {
            self.pos += 1;
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some('e') | Some('E')) {
            self.pos += 1;
            if matches!(self.peek(), Some('-') | Some('+')) {
                self.pos += 1;
            }
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        match text.parse::<f64>() {
            Ok(n) if n.is_finite() => Ok(Value::Num(n)),
            _ => Err(self.error_at(start_col, format!("invalid number literal '{text}'"))),
        }
    }

    fn list(&mut self) -> Result<Value, ParseError> {
        self.expect('[')?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.eat(']') {
            return Ok(Value::List(items));
        }
        loop {
            self.skip_ws();
            items.push(self.value()?);
            self.skip_ws();
            if self.eat(',') {
                self.skip_ws();
                if self.eat(']') {
                    break;
                }
                continue;
            }
            self.expect(']')?;
            break;
        }
        Ok(Value::List(items))
    }
}
