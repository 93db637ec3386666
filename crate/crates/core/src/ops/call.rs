//! Function-call expressions produced by the mutator.
//!
//! Accepted grammar (a Python subset):
//!
//! ```text
//! call    := IDENT '(' [literal (',' literal)* [',']] ')'
//! literal := STRING | INTEGER | IDENT
//! STRING  := ['r'|'R'] ('"' ... '"' | '\'' ... '\'' | '"""' ... '"""' | "'''" ... "'''")
//! ```
//!
//! Unknown escape sequences keep their backslash, as in Python, so a footer
//! such as `[\ANS]` survives a round trip through a quoted argument.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Literal {
    Str(String),
    Int(i64),
    /// Bare identifier, used for enum members.
    Ident(String),
}

impl Literal {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Literal::Str(s) | Literal::Ident(s) => Some(s),
            Literal::Int(_) => None,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => write_python_string(f, s),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Ident(s) => f.write_str(s),
        }
    }
}

fn write_python_string(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '\\' => f.write_str("\\\\")?,
            '"' => f.write_str("\\\"")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            '\r' => f.write_str("\\r")?,
            c if (c as u32) < 0x20 || c == '\u{7f}' => write!(f, "\\x{:02x}", c as u32)?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Mutation,
    Refinement,
}

/// A parsed operation invocation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpCall {
    pub name: String,
    pub args: Vec<Literal>,
    #[serde(default)]
    pub origin: Origin,
}

impl OpCall {
    pub fn new(name: impl Into<String>, args: Vec<Literal>) -> Self {
        OpCall {
            name: name.into(),
            args,
            origin: Origin::Mutation,
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }
}

impl fmt::Display for OpCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no function call found in response")]
    NoCall,
    #[error("expected exactly one function call, found {0}")]
    MultipleCalls(usize),
    #[error("malformed call: {0}")]
    Malformed(String),
}

/// Extracts the single operation call from a raw mutator response.
///
/// The whole response is scanned first; when that does not yield exactly one
/// call, the contents of fenced code blocks are scanned on their own.
pub fn parse_op_call(response: &str) -> Result<OpCall, ParseError> {
    let whole = scan_regions(&[response]);
    if whole.is_ok() {
        return whole;
    }
    let blocks = fenced_blocks(response);
    if !blocks.is_empty() {
        if let Ok(call) = scan_regions(&blocks) {
            return Ok(call);
        }
    }
    whole
}

fn scan_regions(regions: &[&str]) -> Result<OpCall, ParseError> {
    let mut found = Vec::new();
    let mut first_failure = None;
    for region in regions {
        let (calls, failure) = scan_region(region);
        found.extend(calls);
        if first_failure.is_none() {
            first_failure = failure;
        }
    }
    match found.len() {
        1 => Ok(found.pop().expect("one call")),
        0 => Err(first_failure.map(ParseError::Malformed).unwrap_or(ParseError::NoCall)),
        n => Err(ParseError::MultipleCalls(n)),
    }
}

/// Contents of ``` fenced blocks, without the info string line.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                out.push(body);
                break;
            }
        }
    }
    out
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_ascii_alphabetic()
}

fn is_ident_char(c: char) -> bool {
    c == '_' || c.is_ascii_alphanumeric()
}

fn scan_region(region: &str) -> (Vec<OpCall>, Option<String>) {
    let mut calls = Vec::new();
    let mut failure = None;
    let mut i = 0;
    while i < region.len() {
        let c = region[i..].chars().next().expect("in bounds");
        let prev = region[..i].chars().next_back();
        let boundary = prev.is_none_or(|p| !is_ident_char(p) && p != '.');
        if boundary && is_ident_start(c) {
            let ident_len = region[i..]
                .find(|ch: char| !is_ident_char(ch))
                .unwrap_or(region.len() - i);
            let after = i + ident_len;
            if region[after..].starts_with('(') {
                let name = &region[i..after];
                let mut p = Parser {
                    src: region,
                    pos: after + 1,
                };
                match p.args() {
                    Ok(args) => {
                        calls.push(OpCall::new(name, args));
                        i = p.pos;
                        continue;
                    }
                    Err(e) => {
                        failure.get_or_insert(format!("`{name}(`: {e}"));
                        i = balanced_end(region, after);
                        continue;
                    }
                }
            }
            i = after;
            continue;
        }
        i += c.len_utf8();
    }
    (calls, failure)
}

/// Byte offset just past the parenthesis closing the one at `open`, or the
/// end of the region when it is unbalanced.
fn balanced_end(region: &str, open: usize) -> usize {
    let mut depth = 0usize;
    for (off, c) in region[open..].char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return open + off + 1;
                }
            }
            _ => {}
        }
    }
    region.len()
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    /// Parses the argument list after the opening parenthesis.
    fn args(&mut self) -> Result<Vec<Literal>, String> {
        let mut args = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err("unexpected end of input".into()),
                Some(')') => {
                    self.bump();
                    return Ok(args);
                }
                Some(_) => {}
            }
            args.push(self.literal()?);
            self.skip_ws();
            match self.bump() {
                Some(',') => {}
                Some(')') => return Ok(args),
                Some(c) => return Err(format!("expected `,` or `)`, found {c:?}")),
                None => return Err("unexpected end of input".into()),
            }
        }
    }

    fn literal(&mut self) -> Result<Literal, String> {
        let c = self.peek().ok_or("unexpected end of input")?;
        let rest = self.rest();
        if c == '"' || c == '\'' {
            return self.string(false).map(Literal::Str);
        }
        if (c == 'r' || c == 'R') && matches!(rest[1..].chars().next(), Some('"' | '\'')) {
            self.bump();
            return self.string(true).map(Literal::Str);
        }
        if c.is_ascii_digit() || ((c == '-' || c == '+') && rest[1..].starts_with(|d: char| d.is_ascii_digit())) {
            return self.integer();
        }
        if is_ident_start(c) {
            let len = rest.find(|ch: char| !is_ident_char(ch)).unwrap_or(rest.len());
            let ident = rest[..len].to_string();
            self.pos += len;
            self.skip_ws();
            return match self.peek() {
                Some('(') => Err(format!("nested call `{ident}(` is not a literal")),
                Some('=') => Err(format!("keyword argument `{ident}=` is not supported")),
                _ => Ok(Literal::Ident(ident)),
            };
        }
        Err(format!("unexpected character {c:?}"))
    }

    fn integer(&mut self) -> Result<Literal, String> {
        let start = self.pos;
        if matches!(self.peek(), Some('-' | '+')) {
            self.bump();
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.bump();
        }
        if matches!(self.peek(), Some(c) if is_ident_char(c) || c == '.') {
            return Err("only decimal integer literals are supported".into());
        }
        self.src[start..self.pos]
            .parse::<i64>()
            .map(Literal::Int)
            .map_err(|e| format!("bad integer: {e}"))
    }

    fn string(&mut self, raw: bool) -> Result<String, String> {
        let quote = self.bump().expect("quote present");
        let triple = self.rest().starts_with(&format!("{quote}{quote}"));
        if triple {
            self.bump();
            self.bump();
        }
        let mut out = String::new();
        loop {
            let c = self.bump().ok_or("unterminated string literal")?;
            if c == quote {
                if !triple {
                    return Ok(out);
                }
                if self.rest().starts_with(&format!("{quote}{quote}")) {
                    self.bump();
                    self.bump();
                    return Ok(out);
                }
                out.push(c);
                continue;
            }
            if c == '\n' && !triple {
                return Err("line break inside a single-quoted string".into());
            }
            if c != '\\' {
                out.push(c);
                continue;
            }
            let e = self.bump().ok_or("unterminated string literal")?;
            if raw {
                out.push('\\');
                out.push(e);
                continue;
            }
            match e {
                '\n' => {}
                '\\' => out.push('\\'),
                '\'' => out.push('\''),
                '"' => out.push('"'),
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                '0' => out.push('\0'),
                'a' => out.push('\u{07}'),
                'b' => out.push('\u{08}'),
                'f' => out.push('\u{0c}'),
                'v' => out.push('\u{0b}'),
                'x' => out.push(self.hex_escape(2)?),
                'u' => out.push(self.hex_escape(4)?),
                'U' => out.push(self.hex_escape(8)?),
                other => {
                    out.push('\\');
                    out.push(other);
                }
            }
        }
    }

    fn hex_escape(&mut self, digits: usize) -> Result<char, String> {
        let rest = self.rest();
        let hex = rest.get(..digits).ok_or("truncated escape sequence")?;
        let code = u32::from_str_radix(hex, 16).map_err(|_| format!("bad escape digits {hex:?}"))?;
        self.pos += digits;
        char::from_u32(code).ok_or_else(|| format!("invalid code point {code:#x}"))
    }
}
