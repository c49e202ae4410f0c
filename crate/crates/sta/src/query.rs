//! Query options: `$top`, `$skip`, `$orderby`, `$filter`, `$select`,
//! `$expand` plus the `flag_scheme` parameter.
//!
//! Filter grammar (precedence `not` > `and` > `or`):
//!
//! ```text
//! or      := and ('or' and)*
//! and     := unary ('and' unary)*
//! unary   := 'not' unary | '(' or ')' | compare
//! compare := operand ('eq'|'ne'|'gt'|'ge'|'lt'|'le') operand
//! operand := property | number | 'string' | datetime
//! ```

use std::cmp::Ordering;

use chrono::DateTime;
use fairstream_qc::FlagScheme;

use crate::error::QueryError;
use crate::model::{Entity, EntityKind, PropType, PropValue};

pub const DEFAULT_TOP: usize = 100;
pub const DEFAULT_MAX_TOP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Gt,
    Ge,
    Lt,
    Le,
}

impl CmpOp {
    fn parse(word: &str) -> Option<Self> {
        Some(match word {
            "eq" => CmpOp::Eq,
            "ne" => CmpOp::Ne,
            "gt" => CmpOp::Gt,
            "ge" => CmpOp::Ge,
            "lt" => CmpOp::Lt,
            "le" => CmpOp::Le,
            _ => return None,
        })
    }

    /// The operator with its operands swapped (`a < b` is `b > a`).
    pub fn flipped(self) -> Self {
        match self {
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            other => other,
        }
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    /// Nanoseconds since the epoch.
    Time(i64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Property(String),
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Filter {
    Compare(Operand, CmpOp, Operand),
    Not(Box<Filter>),
    And(Box<Filter>, Box<Filter>),
    Or(Box<Filter>, Box<Filter>),
}

impl Filter {
    pub fn matches<E: Entity>(&self, e: &E) -> bool {
        match self {
            Filter::Compare(l, op, r) => {
                let (l, r) = (resolve(l, e), resolve(r, e));
                compare(&l, &r).is_some_and(|ord| op.holds(ord))
            }
            Filter::Not(f) => !f.matches(e),
            Filter::And(a, b) => a.matches(e) && b.matches(e),
            Filter::Or(a, b) => a.matches(e) || b.matches(e),
        }
    }
}

fn resolve<E: Entity>(o: &Operand, e: &E) -> PropValue {
    match o {
        Operand::Property(p) => e.prop(p),
        Operand::Literal(Literal::Number(v)) => PropValue::Number(Some(*v)),
        Operand::Literal(Literal::Time(t)) => PropValue::Time(Some(*t)),
        Operand::Literal(Literal::Text(s)) => PropValue::Text(s.clone()),
    }
}

/// `None` when either side is missing: comparisons with a missing value are
/// false.
fn compare(a: &PropValue, b: &PropValue) -> Option<Ordering> {
    match (a, b) {
        (PropValue::Number(Some(x)), PropValue::Number(Some(y))) => x.partial_cmp(y),
        (PropValue::Time(Some(x)), PropValue::Time(Some(y))) => Some(x.cmp(y)),
        (PropValue::Text(x), PropValue::Text(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

/// Total order for `$orderby`: missing values sort after present ones.
pub fn order_values(a: &PropValue, b: &PropValue) -> Ordering {
    let rank = |v: &PropValue| match v {
        PropValue::Number(None) | PropValue::Time(None) => 1,
        _ => 0,
    };
    match (a, b) {
        (PropValue::Number(Some(x)), PropValue::Number(Some(y))) => x.total_cmp(y),
        (PropValue::Time(Some(x)), PropValue::Time(Some(y))) => x.cmp(y),
        (PropValue::Text(x), PropValue::Text(y)) => x.cmp(y),
        _ => rank(a).cmp(&rank(b)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaQuery {
    pub top: usize,
    pub skip: usize,
    pub orderby: Vec<(String, Direction)>,
    pub filter: Option<Filter>,
    /// `None` selects everything.
    pub select: Option<Vec<String>>,
    pub expand: Vec<String>,
    pub flag_scheme: FlagScheme,
    /// Decoded options other than `$top`/`$skip`, in input order, for
    /// building next links.
    pub carried: Vec<(String, String)>,
}

impl StaQuery {
    pub fn defaults() -> Self {
        Self {
            top: DEFAULT_TOP,
            skip: 0,
            orderby: Vec::new(),
            filter: None,
            select: None,
            expand: Vec::new(),
            flag_scheme: FlagScheme::Simple,
            carried: Vec::new(),
        }
    }
}

/// Parses and validates a raw (still percent-encoded) query string for a
/// collection of `kind`.
pub fn parse_query(raw: &str, kind: EntityKind, max_top: usize) -> Result<StaQuery, QueryError> {
    let mut q = StaQuery::defaults();
    let mut seen: Vec<String> = Vec::new();
    for (key, value) in url::form_urlencoded::parse(raw.as_bytes()) {
        let (key, value) = (key.into_owned(), value.into_owned());
        if key.is_empty() && value.is_empty() {
            continue;
        }
        if seen.contains(&key) {
            return Err(QueryError::InvalidValue {
                option: key,
                message: "given more than once".into(),
            });
        }
        seen.push(key.clone());
        match key.as_str() {
            "$top" => {
                q.top = parse_count(&key, &value)?;
                if q.top > max_top {
                    return Err(QueryError::InvalidValue {
                        option: key,
                        message: format!("must not exceed {max_top}"),
                    });
                }
                continue;
            }
            "$skip" => {
                q.skip = parse_count(&key, &value)?;
                continue;
            }
            "$orderby" => q.orderby = parse_orderby(&value, kind)?,
            "$filter" => q.filter = Some(parse_filter(&value, kind)?),
            "$select" => q.select = Some(parse_select(&value, kind)?),
            "$expand" => q.expand = parse_expand(&value, kind)?,
            "flag_scheme" => {
                q.flag_scheme = value.parse().map_err(|_| QueryError::InvalidValue {
                    option: key.clone(),
                    message: "expected simple or float".into(),
                })?
            }
            _ => return Err(QueryError::UnsupportedOption(key)),
        }
        q.carried.push((key, value));
    }
    Ok(q)
}

fn parse_count(option: &str, value: &str) -> Result<usize, QueryError> {
    let v = value.trim();
    if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) {
        return Err(QueryError::Parse {
            option: option.to_string(),
            position: 0,
            expected: vec!["non-negative integer".into()],
        });
    }
    v.parse().map_err(|_| QueryError::InvalidValue {
        option: option.to_string(),
        message: "number too large".into(),
    })
}

/// Comma-separated items with their character offsets.
fn split_list(value: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for part in value.split(',') {
        let lead = part.len() - part.trim_start().len();
        out.push((value[..start + lead].chars().count(), part.trim()));
        start += part.len() + 1;
    }
    out
}

fn parse_orderby(value: &str, kind: EntityKind) -> Result<Vec<(String, Direction)>, QueryError> {
    let mut out = Vec::new();
    for (pos, item) in split_list(value) {
        let mut words = item.split_whitespace();
        let Some(prop) = words.next() else {
            return Err(QueryError::Parse {
                option: "$orderby".into(),
                position: pos,
                expected: vec!["property".into()],
            });
        };
        if kind.property_type(prop).is_none() {
            return Err(QueryError::UnknownProperty {
                option: "$orderby".into(),
                name: prop.to_string(),
                position: pos,
            });
        }
        let dir = match words.next() {
            None | Some("asc") => Direction::Asc,
            Some("desc") => Direction::Desc,
            Some(_) => {
                return Err(QueryError::Parse {
                    option: "$orderby".into(),
                    position: pos + prop.chars().count() + 1,
                    expected: vec!["asc".into(), "desc".into()],
                })
            }
        };
        if words.next().is_some() {
            return Err(QueryError::Parse {
                option: "$orderby".into(),
                position: pos + item.chars().count(),
                expected: vec!["','".into()],
            });
        }
        out.push((canonical_prop(prop), dir));
    }
    Ok(out)
}

fn canonical_prop(p: &str) -> String {
    if p == "@iot.id" { "id" } else { p }.to_string()
}

fn parse_select(value: &str, kind: EntityKind) -> Result<Vec<String>, QueryError> {
    split_list(value)
        .into_iter()
        .map(|(pos, item)| {
            if item == "id" || item == "@iot.id" || kind.selectable().contains(&item) {
                Ok(canonical_prop(item))
            } else {
                Err(QueryError::UnknownProperty {
                    option: "$select".into(),
                    name: item.to_string(),
                    position: pos,
                })
            }
        })
        .collect()
}

fn parse_expand(value: &str, kind: EntityKind) -> Result<Vec<String>, QueryError> {
    let mut out: Vec<String> = Vec::new();
    for (_, item) in split_list(value) {
        if item.contains('/') || item.contains('(') {
            return Err(QueryError::UnsupportedOption(format!(
                "$expand={item} (only one navigation level without options)"
            )));
        }
        if kind.navigation(item).is_none() {
            return Err(QueryError::UnknownNavigation(item.to_string()));
        }
        if !out.iter().any(|e| e == item) {
            out.push(item.to_string());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    Word(String),
    Number(f64),
    Text(String),
    Time(i64),
}

fn parse_err(position: usize, expected: &[&str]) -> QueryError {
    QueryError::Parse {
        option: "$filter".into(),
        position,
        expected: expected.iter().map(|s| s.to_string()).collect(),
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, QueryError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            '\'' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => return Err(parse_err(i, &["closing quote"])),
                        Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                Tok::Text(s)
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                i = if looks_like_datetime(&chars[start..]) {
                    scan_while(&chars, start, |ch| !ch.is_whitespace() && ch != ')')
                } else {
                    scan_number(&chars, start)
                };
                if chars.get(i).is_some_and(|ch| ch.is_alphanumeric() || *ch == '_') {
                    return Err(parse_err(i, &["operator", "')'"]));
                }
                let text: String = chars[start..i].iter().collect();
                if looks_like_datetime(&chars[start..]) {
                    let t = DateTime::parse_from_rfc3339(&text)
                        .ok()
                        .and_then(|d| d.timestamp_nanos_opt())
                        .ok_or_else(|| parse_err(start, &["RFC3339 date-time"]))?;
                    Tok::Time(t)
                } else {
                    match text.parse::<f64>() {
                        Ok(v) if v.is_finite() => Tok::Number(v),
                        _ => return Err(parse_err(start, &["number", "RFC3339 date-time"])),
                    }
                }
            }
            c if c.is_alphabetic() || c == '_' || c == '@' => {
                while i < chars.len()
                    && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '@' | '.' | '/'))
                {
                    i += 1;
                }
                Tok::Word(chars[start..i].iter().collect())
            }
            _ => return Err(parse_err(start, &["property", "literal", "'('"])),
        };
        out.push((start, tok));
    }
    Ok(out)
}

/// `YYYY-MM-DDT` prefix.
fn looks_like_datetime(c: &[char]) -> bool {
    c.len() > 10
        && c[..4].iter().all(char::is_ascii_digit)
        && c[4] == '-'
        && c[5..7].iter().all(char::is_ascii_digit)
        && c[7] == '-'
        && c[8..10].iter().all(char::is_ascii_digit)
        && matches!(c[10], 'T' | 't')
}

fn scan_while(c: &[char], mut i: usize, pred: impl Fn(char) -> bool) -> usize {
    while i < c.len() && pred(c[i]) {
        i += 1;
    }
    i
}

/// `[+-]digits[.digits][(e|E)[+-]digits]`; returns the end offset.
fn scan_number(c: &[char], start: usize) -> usize {
    let mut i = start;
    if matches!(c.get(i), Some('+' | '-')) {
        i += 1;
    }
    i = scan_while(c, i, |ch| ch.is_ascii_digit());
    if c.get(i) == Some(&'.') {
        i = scan_while(c, i + 1, |ch| ch.is_ascii_digit());
    }
    if matches!(c.get(i), Some('e' | 'E')) {
        let mut j = i + 1;
        if matches!(c.get(j), Some('+' | '-')) {
            j += 1;
        }
        let k = scan_while(c, j, |ch| ch.is_ascii_digit());
        if k > j {
            i = k;
        }
    }
    i
}

struct FilterParser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    kind: EntityKind,
}

impl FilterParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w == kw)
    }

    fn or(&mut self) -> Result<Filter, QueryError> {
        let mut lhs = self.and()?;
        while self.keyword("or") {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Filter::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Filter, QueryError> {
        let mut lhs = self.unary()?;
        while self.keyword("and") {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Filter::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Filter, QueryError> {
        if self.keyword("not") {
            self.pos += 1;
            return Ok(Filter::Not(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let inner = self.or()?;
            if self.peek() != Some(&Tok::RParen) {
                return Err(parse_err(self.here(), &["')'", "'and'", "'or'"]));
            }
            self.pos += 1;
            return Ok(inner);
        }
        self.compare()
    }

    fn operand(&mut self) -> Result<(usize, Operand, Option<PropType>), QueryError> {
        let at = self.here();
        let (op, ty) = match self.peek().cloned() {
            Some(Tok::Word(w)) if !is_reserved(&w) => {
                let ty = self.kind.property_type(&w).ok_or_else(|| QueryError::UnknownProperty {
                    option: "$filter".into(),
                    name: w.clone(),
                    position: at,
                })?;
                (Operand::Property(canonical_prop(&w)), Some(ty))
            }
            Some(Tok::Number(v)) => (Operand::Literal(Literal::Number(v)), None),
            Some(Tok::Text(s)) => (Operand::Literal(Literal::Text(s)), None),
            Some(Tok::Time(t)) => (Operand::Literal(Literal::Time(t)), None),
            _ => return Err(parse_err(at, &["property", "literal", "'('", "'not'"])),
        };
        self.pos += 1;
        Ok((at, op, ty))
    }

    fn compare(&mut self) -> Result<Filter, QueryError> {
        let (lpos, lhs, lty) = self.operand()?;
        let op = match self.peek() {
            Some(Tok::Word(w)) => CmpOp::parse(w),
            _ => None,
        }
        .ok_or_else(|| parse_err(self.here(), &["eq", "ne", "gt", "ge", "lt", "le"]))?;
        self.pos += 1;
        let (rpos, rhs, rty) = self.operand()?;
        let lit_type = |o: &Operand| match o {
            Operand::Literal(Literal::Number(_)) => Some(PropType::Number),
            Operand::Literal(Literal::Time(_)) => Some(PropType::Time),
            Operand::Literal(Literal::Text(_)) => Some(PropType::Text),
            Operand::Property(_) => None,
        };
        let (lt, rt) = (lty.or(lit_type(&lhs)), rty.or(lit_type(&rhs)));
        if lty.is_none() && rty.is_none() {
            return Err(parse_err(lpos, &["property"]));
        }
        if lt != rt {
            return Err(QueryError::Parse {
                option: "$filter".into(),
                position: if lty.is_some() { rpos } else { lpos },
                expected: vec![format!("{} operand", type_name(if lty.is_some() { lt } else { rt }))],
            });
        }
        Ok(Filter::Compare(lhs, op, rhs))
    }
}

fn is_reserved(word: &str) -> bool {
    matches!(word, "and" | "or" | "not") || CmpOp::parse(word).is_some()
}

fn type_name(t: Option<PropType>) -> &'static str {
    match t {
        Some(PropType::Number) => "numeric",
        Some(PropType::Time) => "date-time",
        Some(PropType::Text) => "string",
        None => "any",
    }
}

pub fn parse_filter(src: &str, kind: EntityKind) -> Result<Filter, QueryError> {
    let toks = lex(src)?;
    let mut p = FilterParser {
        toks,
        pos: 0,
        end: src.chars().count(),
        kind,
    };
    let f = p.or()?;
    if p.pos < p.toks.len() {
        return Err(parse_err(p.here(), &["'and'", "'or'", "end of input"]));
    }
    Ok(f)
}
