//! Point-wise boolean expressions for `flagGeneric`.
//!
//! ```text
//! or   := and ('or' and)*
//! and  := not ('and' not)*
//! not  := 'not' not | cmp
//! cmp  := sum (('<' | '<=' | '>' | '>=' | '==' | '!=') sum)?
//! sum  := prod (('+' | '-') prod)*
//! prod := neg (('*' | '/') neg)*
//! neg  := '-' neg | atom
//! atom := number | ident | '(' or ')'
//! ```
//!
//! The whole expression must be boolean. `x` names the target series.

use thiserror::Error;

pub const TARGET: &str = "x";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("position {position}: {message}")]
pub struct ExprError {
    /// 0-based character offset into the expression.
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
enum Num {
    Lit(f64),
    /// Index into [`Expr::variables`].
    Var(usize),
    Neg(Box<Num>),
    Arith(ArithOp, Box<Num>, Box<Num>),
}

#[derive(Debug, Clone, PartialEq)]
enum Bool {
    Cmp(CmpOp, Num, Num),
    Not(Box<Bool>),
    And(Box<Bool>, Box<Bool>),
    Or(Box<Bool>, Box<Bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Bool,
    variables: Vec<String>,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        let tokens = tokenize(source)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            variables: Vec::new(),
            end: source.chars().count(),
        };
        let root = match p.or()? {
            Node::Bool(b) => b,
            Node::Num(_) => {
                return Err(ExprError {
                    position: 0,
                    message: "expression must evaluate to true or false".into(),
                })
            }
        };
        if let Some(t) = p.tokens.get(p.pos) {
            return Err(ExprError {
                position: t.pos,
                message: "unexpected trailing input".into(),
            });
        }
        Ok(Self {
            source: source.to_string(),
            root,
            variables: p.variables,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Distinct variable names in order of first appearance.
    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    /// Evaluates with `values[i]` bound to `variables()[i]`. A `None` value
    /// means the variable has no point here and the result is `false`.
    pub fn eval(&self, values: &[Option<f64>]) -> bool {
        debug_assert_eq!(values.len(), self.variables.len());
        if values.iter().any(Option::is_none) {
            return false;
        }
        eval_bool(&self.root, values)
    }
}

fn eval_num(n: &Num, v: &[Option<f64>]) -> f64 {
    match n {
        Num::Lit(x) => *x,
        Num::Var(i) => v[*i].unwrap_or(f64::NAN),
        Num::Neg(a) => -eval_num(a, v),
        Num::Arith(op, a, b) => {
            let (a, b) = (eval_num(a, v), eval_num(b, v));
            match op {
                ArithOp::Add => a + b,
                ArithOp::Sub => a - b,
                ArithOp::Mul => a * b,
                ArithOp::Div => a / b,
            }
        }
    }
}

fn eval_bool(b: &Bool, v: &[Option<f64>]) -> bool {
    match b {
        Bool::Cmp(op, l, r) => {
            let (l, r) = (eval_num(l, v), eval_num(r, v));
            match op {
                CmpOp::Lt => l < r,
                CmpOp::Le => l <= r,
                CmpOp::Gt => l > r,
                CmpOp::Ge => l >= r,
                CmpOp::Eq => l == r,
                CmpOp::Ne => l != r,
            }
        }
        Bool::Not(a) => !eval_bool(a, v),
        Bool::And(a, b) => eval_bool(a, v) && eval_bool(b, v),
        Bool::Or(a, b) => eval_bool(a, v) || eval_bool(b, v),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    And,
    Or,
    Not,
    Cmp(CmpOp),
    Arith(ArithOp),
    LParen,
    RParen,
}

#[derive(Debug)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        let two = |next: char| chars.get(i + 1) == Some(&next);
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '+' => Tok::Arith(ArithOp::Add),
            '-' => Tok::Arith(ArithOp::Sub),
            '*' => Tok::Arith(ArithOp::Mul),
            '/' => Tok::Arith(ArithOp::Div),
            '<' if two('=') => {
                i += 1;
                Tok::Cmp(CmpOp::Le)
            }
            '<' => Tok::Cmp(CmpOp::Lt),
            '>' if two('=') => {
                i += 1;
                Tok::Cmp(CmpOp::Ge)
            }
            '>' => Tok::Cmp(CmpOp::Gt),
            '=' if two('=') => {
                i += 1;
                Tok::Cmp(CmpOp::Eq)
            }
            '!' if two('=') => {
                i += 1;
                Tok::Cmp(CmpOp::Ne)
            }
            c if c.is_ascii_digit() || c == '.' => {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && matches!(chars[i], 'e' | 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && matches!(chars[j], '+' | '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v = text.parse::<f64>().map_err(|_| ExprError {
                    position: start,
                    message: format!("invalid number {text:?}"),
                })?;
                out.push(Token {
                    tok: Tok::Num(v),
                    pos: start,
                });
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = match word.as_str() {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    _ => Tok::Ident(word),
                };
                out.push(Token { tok, pos: start });
                continue;
            }
            other => {
                return Err(ExprError {
                    position: start,
                    message: format!("unexpected character {other:?}"),
                })
            }
        };
        i += 1;
        out.push(Token { tok, pos: start });
    }
    Ok(out)
}

enum Node {
    Num(Num),
    Bool(Bool),
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    variables: Vec<String>,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.pos)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            position: self.here(),
            message: message.into(),
        })
    }

    fn want_bool(&self, n: Node, at: usize) -> Result<Bool, ExprError> {
        match n {
            Node::Bool(b) => Ok(b),
            Node::Num(_) => Err(ExprError {
                position: at,
                message: "expected a comparison".into(),
            }),
        }
    }

    fn want_num(&self, n: Node, at: usize) -> Result<Num, ExprError> {
        match n {
            Node::Num(x) => Ok(x),
            Node::Bool(_) => Err(ExprError {
                position: at,
                message: "expected a number, found a condition".into(),
            }),
        }
    }

    fn or(&mut self) -> Result<Node, ExprError> {
        let at = self.here();
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            let rat = self.here();
            let rhs = self.and()?;
            let l = self.want_bool(lhs, at)?;
            let r = self.want_bool(rhs, rat)?;
            lhs = Node::Bool(Bool::Or(Box::new(l), Box::new(r)));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Node, ExprError> {
        let at = self.here();
        let mut lhs = self.not()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            let rat = self.here();
            let rhs = self.not()?;
            let l = self.want_bool(lhs, at)?;
            let r = self.want_bool(rhs, rat)?;
            lhs = Node::Bool(Bool::And(Box::new(l), Box::new(r)));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Node, ExprError> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            let at = self.here();
            let inner = self.not()?;
            return Ok(Node::Bool(Bool::Not(Box::new(self.want_bool(inner, at)?))));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Node, ExprError> {
        let at = self.here();
        let lhs = self.sum()?;
        let Some(Tok::Cmp(op)) = self.peek().cloned() else {
            return Ok(lhs);
        };
        self.pos += 1;
        let rat = self.here();
        let rhs = self.sum()?;
        let l = self.want_num(lhs, at)?;
        let r = self.want_num(rhs, rat)?;
        if matches!(self.peek(), Some(Tok::Cmp(_))) {
            return self.err("comparisons cannot be chained");
        }
        Ok(Node::Bool(Bool::Cmp(op, l, r)))
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let at = self.here();
        let mut lhs = self.prod()?;
        while let Some(Tok::Arith(op @ (ArithOp::Add | ArithOp::Sub))) = self.peek().cloned() {
            self.pos += 1;
            let rat = self.here();
            let rhs = self.prod()?;
            let l = self.want_num(lhs, at)?;
            let r = self.want_num(rhs, rat)?;
            lhs = Node::Num(Num::Arith(op, Box::new(l), Box::new(r)));
        }
        Ok(lhs)
    }

    fn prod(&mut self) -> Result<Node, ExprError> {
        let at = self.here();
        let mut lhs = self.neg()?;
        while let Some(Tok::Arith(op @ (ArithOp::Mul | ArithOp::Div))) = self.peek().cloned() {
            self.pos += 1;
            let rat = self.here();
            let rhs = self.neg()?;
            let l = self.want_num(lhs, at)?;
            let r = self.want_num(rhs, rat)?;
            lhs = Node::Num(Num::Arith(op, Box::new(l), Box::new(r)));
        }
        Ok(lhs)
    }

    fn neg(&mut self) -> Result<Node, ExprError> {
        if self.peek() == Some(&Tok::Arith(ArithOp::Sub)) {
            self.pos += 1;
            let at = self.here();
            let inner = self.neg()?;
            return Ok(Node::Num(Num::Neg(Box::new(self.want_num(inner, at)?))));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(Num::Lit(v)))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                let idx = match self.variables.iter().position(|v| *v == name) {
                    Some(i) => i,
                    None => {
                        self.variables.push(name);
                        self.variables.len() - 1
                    }
                };
                Ok(Node::Num(Num::Var(idx)))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.or()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(_) => self.err("expected a number, variable or '('"),
            None => self.err("unexpected end of expression"),
        }
    }
}
