//! The line-oriented QC configuration language.
//!
//! ```text
//! line  := varname ';' call | comment | blank
//! call  := ident '(' kwarg (',' kwarg)* ')'
//! kwarg := ident '=' literal
//! ```
//!
//! Comments start with `#` and run to the end of the line. Literals are
//! numbers, single- or double-quoted strings and `true`/`false`.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{self, QcFunction};
use crate::flags::BAD;

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Str(String),
    Bool(bool),
}

impl Literal {
    pub fn type_name(&self) -> &'static str {
        match self {
            Literal::Number(_) => "number",
            Literal::Str(_) => "string",
            Literal::Bool(_) => "bool",
        }
    }
}

/// Canonical text form: integers without a fraction, other numbers in
/// shortest round-trip form, strings double-quoted.
impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(v) => write!(f, "{}", canonical_number(*v)),
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

pub fn canonical_number(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcCall {
    pub name: String,
    pub kwargs: BTreeMap<String, Literal>,
    /// Points whose current flag is at least this are not evaluated.
    pub dfilter: f32,
}

impl QcCall {
    /// `k=v` pairs sorted by name, comma separated.
    pub fn canonical_kwargs(&self) -> String {
        self.kwargs
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcEntry {
    /// 1-based source line.
    pub line: usize,
    pub variable: String,
    pub call: QcCall,
    pub function: QcFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcConfig {
    pub entries: Vec<QcEntry>,
    pub source_text: String,
    /// Hex SHA-256 of the canonicalized source.
    pub config_hash: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}, column {column}: syntax error, expected {}", expected.join(" or "))]
    Syntax {
        line: usize,
        column: usize,
        expected: Vec<String>,
    },
    #[error("line {line}: unknown function {name:?}")]
    UnknownFunction { line: usize, name: String },
    #[error("line {line}: bad argument {kwarg:?} to {function}: {reason}")]
    BadArgument {
        line: usize,
        function: String,
        kwarg: String,
        reason: String,
    },
    #[error("line {line}: expression error at position {position}: {message}")]
    ExprSyntax {
        line: usize,
        position: usize,
        message: String,
    },
    #[error("line {line}: unknown variable {name:?}")]
    UnknownVariable { line: usize, name: String },
}

impl ConfigError {
    pub fn line(&self) -> usize {
        match self {
            ConfigError::Syntax { line, .. }
            | ConfigError::UnknownFunction { line, .. }
            | ConfigError::BadArgument { line, .. }
            | ConfigError::ExprSyntax { line, .. }
            | ConfigError::UnknownVariable { line, .. } => *line,
        }
    }
}

impl QcConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let Some((variable, name, kwargs)) = LineParser::new(raw, line).parse()? else {
                continue;
            };
            let (function, dfilter) = catalog::build(line, &name, &kwargs)?;
            entries.push(QcEntry {
                line,
                variable,
                call: QcCall {
                    name,
                    kwargs,
                    dfilter,
                },
                function,
            });
        }
        Ok(Self {
            entries,
            source_text: text.to_string(),
            config_hash: config_hash(text),
        })
    }

    /// Checks that every target and referenced variable is available.
    /// Series produced by earlier `resample` entries count as available.
    pub fn validate_variables<S: AsRef<str>>(&self, available: &[S]) -> Result<(), ConfigError> {
        let mut known: Vec<String> = available.iter().map(|s| s.as_ref().to_string()).collect();
        for e in &self.entries {
            if !known.contains(&e.variable) {
                return Err(ConfigError::UnknownVariable {
                    line: e.line,
                    name: e.variable.clone(),
                });
            }
            for name in e.function.referenced_variables() {
                if name != crate::expr::TARGET && !known.iter().any(|k| k == name) {
                    return Err(ConfigError::UnknownVariable {
                        line: e.line,
                        name: name.to_string(),
                    });
                }
            }
            if let QcFunction::Resample { .. } = &e.function {
                known.push(e.function.derived_name(&e.variable));
            }
        }
        Ok(())
    }

    pub fn variables(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.entries.iter().map(|e| e.variable.as_str()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Comments stripped, whitespace runs outside string literals collapsed to a
/// single space, blank lines dropped.
pub fn canonicalize(text: &str) -> String {
    let mut lines = Vec::new();
    for raw in text.lines() {
        let mut out = String::new();
        let mut quote: Option<char> = None;
        let mut pending_space = false;
        let mut chars = raw.chars();
        while let Some(c) = chars.next() {
            match quote {
                Some(q) => {
                    out.push(c);
                    if c == '\\' {
                        if let Some(n) = chars.next() {
                            out.push(n);
                        }
                    } else if c == q {
                        quote = None;
                    }
                }
                None if c == '#' => break,
                None if c.is_whitespace() => pending_space = true,
                None => {
                    if pending_space && !out.is_empty() {
                        out.push(' ');
                    }
                    pending_space = false;
                    if c == '"' || c == '\'' {
                        quote = Some(c);
                    }
                    out.push(c);
                }
            }
        }
        if !out.is_empty() {
            lines.push(out);
        }
    }
    lines.join("\n")
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(canonicalize(text).as_bytes()))
}

struct LineParser<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    _src: &'a str,
}

type ParsedLine = (String, String, BTreeMap<String, Literal>);

impl<'a> LineParser<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            line,
            _src: src,
        }
    }

    fn err(&self, expected: &[&str]) -> ConfigError {
        ConfigError::Syntax {
            line: self.line,
            column: self.pos + 1,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn at_line_end(&self) -> bool {
        matches!(self.peek(), None | Some('#'))
    }

    fn expect(&mut self, c: char) -> Result<(), ConfigError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&[&format!("'{c}'")]))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ConfigError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_alphabetic() || c == '_' => self.pos += 1,
            _ => return Err(self.err(&[what])),
        }
        while self
            .peek()
            .is_some_and(|c| c.is_alphanumeric() || c == '_')
        {
            self.pos += 1;
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn parse(mut self) -> Result<Option<ParsedLine>, ConfigError> {
        self.skip_ws();
        if self.at_line_end() {
            return Ok(None);
        }
        let variable = self.ident("variable name")?;
        self.expect(';')?;
        let name = self.ident("function name")?;
        self.expect('(')?;
        let mut kwargs = BTreeMap::new();
        loop {
            self.skip_ws();
            let kw_col = self.pos;
            let key = self.ident("argument name")?;
            self.expect('=')?;
            self.skip_ws();
            let value = self.literal()?;
            if kwargs.insert(key.clone(), value).is_some() {
                let _ = kw_col;
                return Err(ConfigError::BadArgument {
                    line: self.line,
                    function: name,
                    kwarg: key,
                    reason: "given more than once".into(),
                });
            }
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(')') => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(self.err(&["','", "')'"])),
            }
        }
        self.skip_ws();
        if !self.at_line_end() {
            return Err(self.err(&["end of line"]));
        }
        Ok(Some((variable, name, kwargs)))
    }

    fn literal(&mut self) -> Result<Literal, ConfigError> {
        match self.peek() {
            Some(q @ ('"' | '\'')) => self.string(q),
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => self.number(),
            Some(c) if c.is_alphabetic() => {
                let start = self.pos;
                let word = self.ident("literal")?;
                match word.as_str() {
                    "true" | "True" => Ok(Literal::Bool(true)),
                    "false" | "False" => Ok(Literal::Bool(false)),
                    _ => {
                        self.pos = start;
                        Err(self.err(&["number", "string", "true", "false"]))
                    }
                }
            }
            _ => Err(self.err(&["number", "string", "true", "false"])),
        }
    }

    fn string(&mut self, quote: char) -> Result<Literal, ConfigError> {
        self.pos += 1;
        let mut s = String::new();
        loop {
            match self.peek() {
                None => return Err(self.err(&[&format!("closing {quote}")])),
                Some('\\') => {
                    self.pos += 1;
                    let c = match self.peek() {
                        Some('n') => '\n',
                        Some('t') => '\t',
                        Some(c @ ('\\' | '"' | '\'')) => c,
                        _ => return Err(self.err(&["escape sequence"])),
                    };
                    s.push(c);
                    self.pos += 1;
                }
                Some(c) if c == quote => {
                    self.pos += 1;
                    return Ok(Literal::Str(s));
                }
                Some(c) => {
                    s.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    fn number(&mut self) -> Result<Literal, ConfigError> {
        let start = self.pos;
        if matches!(self.peek(), Some('-' | '+')) {
            self.pos += 1;
        }
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.peek().is_some_and(|c| c.is_ascii_digit()) {
                p.pos += 1;
            }
            p.pos - s
        };
        let int_digits = digits(self);
        let mut frac_digits = 0;
        if self.peek() == Some('.') {
            self.pos += 1;
            frac_digits = digits(self);
        }
        if int_digits + frac_digits == 0 {
            return Err(self.err(&["digit"]));
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some('-' | '+')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                return Err(self.err(&["exponent digits"]));
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>()
            .map(Literal::Number)
            .map_err(|_| {
                self.pos = start;
                self.err(&["number"])
            })
    }
}

pub(crate) const DEFAULT_DFILTER: f32 = BAD;
