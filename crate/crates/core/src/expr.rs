//! A small arithmetic expression language for coefficient and control functions.
//!
//! Grammar:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := factor (('*' | '/') factor)*
//! factor  := unary ('^' factor)?
//! unary   := '-' unary | primary
//! primary := number | ident | ident '(' args ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and unary minus binds tighter than the base of `^`,
//! so `-2^2` is `(-2)^2`. Every variable must come from the allowed set passed
//! to [`parse`]; the position of a name in that set is its binding slot.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Abs,
    Sqrt,
    Min,
    Max,
    Atan,
    Tanh,
}

impl Func {
    pub const ALL: [Func; 10] = [
        Func::Exp,
        Func::Ln,
        Func::Sin,
        Func::Cos,
        Func::Abs,
        Func::Sqrt,
        Func::Min,
        Func::Max,
        Func::Atan,
        Func::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
            Func::Atan => "atan",
            Func::Tanh => "tanh",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }
}

/// Expression tree node. Variables refer to binding slots.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    /// Evaluates the node, returning the first subexpression whose value is not finite.
    fn eval<'a>(&'a self, args: &[f64]) -> Result<f64, &'a Node> {
        let v = match self {
            Node::Num(v) => *v,
            Node::Var(slot) => args[*slot],
            Node::Neg(a) => -a.eval(args)?,
            Node::Binary(op, a, b) => op.apply(a.eval(args)?, b.eval(args)?),
            Node::Call(f, children) => {
                let a = children[0].eval(args)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Ln => a.ln(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => a.sqrt(),
                    Func::Atan => a.atan(),
                    Func::Tanh => a.tanh(),
                    Func::Min => a.min(children[1].eval(args)?),
                    Func::Max => a.max(children[1].eval(args)?),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self)
        }
    }

    fn eval_unchecked(&self, args: &[f64]) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Var(slot) => args[*slot],
            Node::Neg(a) => -a.eval_unchecked(args),
            Node::Binary(op, a, b) => op.apply(a.eval_unchecked(args), b.eval_unchecked(args)),
            Node::Call(f, c) => {
                let a = c[0].eval_unchecked(args);
                match f {
                    Func::Exp => a.exp(),
                    Func::Ln => a.ln(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => a.sqrt(),
                    Func::Atan => a.atan(),
                    Func::Tanh => a.tanh(),
                    Func::Min => a.min(c[1].eval_unchecked(args)),
                    Func::Max => a.max(c[1].eval_unchecked(args)),
                }
            }
        }
    }

    fn uses_slot(&self, slot: usize) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(s) => *s == slot,
            Node::Neg(a) => a.uses_slot(slot),
            Node::Binary(_, a, b) => a.uses_slot(slot) || b.uses_slot(slot),
            Node::Call(_, c) => c.iter().any(|n| n.uses_slot(slot)),
        }
    }

    fn write(&self, vars: &[String], out: &mut String) {
        use std::fmt::Write;
        match self {
            Node::Num(v) => {
                if v.is_sign_negative() {
                    let _ = write!(out, "(-{})", -v);
                } else {
                    let _ = write!(out, "{v}");
                }
            }
            Node::Var(slot) => out.push_str(&vars[*slot]),
            Node::Neg(a) => {
                out.push_str("(-");
                a.write(vars, out);
                out.push(')');
            }
            Node::Binary(op, a, b) => {
                out.push('(');
                a.write(vars, out);
                out.push(' ');
                out.push(op.symbol());
                out.push(' ');
                b.write(vars, out);
                out.push(')');
            }
            Node::Call(f, children) => {
                out.push_str(f.name());
                out.push('(');
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    c.write(vars, out);
                }
                out.push(')');
            }
        }
    }
}

/// A parsed expression together with the variable names it may bind.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    vars: Vec<String>,
    root: Node,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at byte {offset}: expected {expected}, found {found}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error: `{subexpr}` evaluated to {value}")]
    Domain { subexpr: String, value: f64 },
    #[error("missing binding for variable `{0}`")]
    Unbound(String),
    #[error("expected {expected} arguments, got {got}")]
    Arity { expected: usize, got: usize },
}

impl Expr {
    /// Builds an expression from a tree. Panics if a variable slot is out of range.
    pub fn from_node(root: Node, vars: &[&str]) -> Self {
        fn check(n: &Node, len: usize) {
            match n {
                Node::Num(_) => {}
                Node::Var(s) => assert!(*s < len, "variable slot {s} out of range"),
                Node::Neg(a) => check(a, len),
                Node::Binary(_, a, b) => {
                    check(a, len);
                    check(b, len);
                }
                Node::Call(f, c) => {
                    assert_eq!(c.len(), f.arity(), "arity mismatch for {}", f.name());
                    c.iter().for_each(|n| check(n, len));
                }
            }
        }
        check(&root, vars.len());
        Expr {
            vars: vars.iter().map(|s| s.to_string()).collect(),
            root,
        }
    }

    pub fn constant(v: f64, vars: &[&str]) -> Self {
        Expr::from_node(Node::Num(v), vars)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// True if the expression mentions the named variable.
    pub fn depends_on(&self, name: &str) -> bool {
        self.vars
            .iter()
            .position(|v| v == name)
            .is_some_and(|slot| self.root.uses_slot(slot))
    }

    /// Evaluates with positional bindings, one per declared variable.
    #[inline]
    pub fn eval(&self, args: &[f64]) -> Result<f64, EvalError> {
        if args.len() != self.vars.len() {
            return Err(EvalError::Arity {
                expected: self.vars.len(),
                got: args.len(),
            });
        }
        self.root.eval(args).map_err(|node| self.domain_error(node, args))
    }

    /// Evaluates with named bindings.
    pub fn eval_named(&self, bindings: &HashMap<&str, f64>) -> Result<f64, EvalError> {
        let args = self
            .vars
            .iter()
            .map(|name| {
                bindings
                    .get(name.as_str())
                    .copied()
                    .ok_or_else(|| EvalError::Unbound(name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.eval(&args)
    }

    fn domain_error(&self, node: &Node, args: &[f64]) -> EvalError {
        let value = node.eval_unchecked(args);
        let mut subexpr = String::new();
        node.write(&self.vars, &mut subexpr);
        EvalError::Domain { subexpr, value }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.root.write(&self.vars, &mut s);
        f.write_str(&s)
    }
}

/// Parses `source`, accepting only the names in `allowed_vars` as variables.
pub fn parse(source: &str, allowed_vars: &[&str]) -> Result<Expr, ParseError> {
    let tokens = lex(source)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        vars: allowed_vars,
    };
    let root = p.expr()?;
    let tok = p.peek();
    if tok.kind != Tok::End {
        return Err(p.error("operator or end of input"));
    }
    Ok(Expr {
        vars: allowed_vars.iter().map(|s| s.to_string()).collect(),
        root,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Plus => f.write_str("'+'"),
            Tok::Minus => f.write_str("'-'"),
            Tok::Star => f.write_str("'*'"),
            Tok::Slash => f.write_str("'/'"),
            Tok::Caret => f.write_str("'^'"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::Comma => f.write_str("','"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b'.' {
                    j += 1;
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text = &src[i..j];
                let v: f64 = text.parse().map_err(|_| ParseError {
                    offset: start,
                    expected: "number".into(),
                    found: format!("`{text}`"),
                })?;
                if !v.is_finite() {
                    return Err(ParseError {
                        offset: start,
                        expected: "finite number".into(),
                        found: format!("`{text}`"),
                    });
                }
                i = j;
                out.push(Token {
                    kind: Tok::Num(v),
                    offset: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                let name = src[i..j].to_string();
                i = j;
                out.push(Token {
                    kind: Tok::Ident(name),
                    offset: start,
                });
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    offset: start,
                    expected: "token".into(),
                    found: format!("character {ch:?}"),
                });
            }
        };
        i += 1;
        out.push(Token { kind, offset: start });
    }
    out.push(Token {
        kind: Tok::End,
        offset: src.len(),
    });
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.kind != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ParseError {
        let t = self.peek();
        ParseError {
            offset: t.offset,
            expected: expected.to_string(),
            found: t.kind.to_string(),
        }
    }

    fn expect(&mut self, kind: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek().kind == kind {
            self.bump();
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().kind {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek().kind {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Node, ParseError> {
        let base = self.unary()?;
        if self.peek().kind == Tok::Caret {
            self.bump();
            let exp = self.factor()?;
            return Ok(Node::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek().kind == Tok::Minus {
            self.bump();
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let tok = self.peek().clone();
        match tok.kind {
            Tok::Num(v) => {
                self.bump();
                Ok(Node::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(ref name) => {
                let next_is_paren = self.tokens[self.pos + 1].kind == Tok::LParen;
                if let Some(func) = Func::lookup(name).filter(|_| next_is_paren) {
                    self.bump();
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while self.peek().kind == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    if args.len() != func.arity() {
                        return Err(ParseError {
                            offset: tok.offset,
                            expected: format!(
                                "{} argument(s) to `{}`",
                                func.arity(),
                                func.name()
                            ),
                            found: format!("{} argument(s)", args.len()),
                        });
                    }
                    self.expect(Tok::RParen, "')'")?;
                    return Ok(Node::Call(func, args));
                }
                if let Some(slot) = self.vars.iter().position(|v| v == name) {
                    self.bump();
                    return Ok(Node::Var(slot));
                }
                let expected = if Func::lookup(name).is_some() {
                    format!("'(' after function `{name}`")
                } else if self.vars.is_empty() {
                    "a number or function (no variables allowed here)".to_string()
                } else {
                    format!("one of the variables {{{}}} or a function", self.vars.join(", "))
                };
                Err(ParseError {
                    offset: tok.offset,
                    expected,
                    found: tok.kind.to_string(),
                })
            }
            Tok::End if self.pos == 0 => Err(self.error("expression")),
            _ => Err(self.error("number, variable, function call or '('")),
        }
    }
}
