//! Closed-form scalar fields.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" unary ] ;              (* right associative *)
//! primary = number | variable | constant
//!         | func "(" expr { "," expr } ")"
//!         | "(" expr ")" ;
//! variable = "x" digit { digit } ;              (* x0 .. x(n-1) *)
//! constant = "pi" | "e" ;
//! func    = "exp" | "log" | "sin" | "cos" | "abs" | "sgn" | "sqrt"
//!         | "sigmoid" | "max" | "min" ;          (* max/min take two args *)
//! number  = digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ] ;
//! ```
//!
//! Parsed expressions are compiled to a postfix tape. [`ScalarField::value`]
//! walks the tape with plain floats; [`ScalarField::gradient`] walks it with
//! forward-mode dual numbers carrying all `n` partials at once.
//!
//! Kinks follow one convention everywhere: `abs'(0) = 0`, `sgn' = 0`, and at a
//! tie `max(u, v)` / `min(u, v)` keep only the derivative components on which
//! both branches agree (so `max(t, 0)' = 0` at `t = 0`).

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

/// Byte range of a subexpression in its source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("variable x{index} at byte {offset} is out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize, offset: usize },
    #[error("`{func}` expects {expected} argument(s), got {got} (byte {offset})")]
    Arity { func: &'static str, expected: usize, got: usize, offset: usize },
    #[error("domain error in `{op}` at {span}: argument {arg}")]
    Domain { op: &'static str, span: Span, arg: f64 },
    #[error("point has {got} coordinates, field dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("unknown builtin `{name}`; available: {available}")]
    UnknownBuiltin { name: String, available: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Abs,
    Sgn,
    Sqrt,
    Sigmoid,
    Max,
    Min,
}

impl Func {
    const ALL: [Func; 10] = [
        Func::Exp,
        Func::Log,
        Func::Sin,
        Func::Cos,
        Func::Abs,
        Func::Sgn,
        Func::Sqrt,
        Func::Sigmoid,
        Func::Max,
        Func::Min,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Sgn => "sgn",
            Func::Sqrt => "sqrt",
            Func::Sigmoid => "sigmoid",
            Func::Max => "max",
            Func::Min => "min",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Max | Func::Min => 2,
            _ => 1,
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Var(usize),
    Const(f64),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Abstract syntax tree with source spans.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub node: Node,
    pub span: Span,
}

impl Expr {
    /// Structural equality ignoring spans.
    pub fn same_tree(&self, other: &Expr) -> bool {
        match (&self.node, &other.node) {
            (Node::Var(a), Node::Var(b)) => a == b,
            (Node::Const(a), Node::Const(b)) => a.to_bits() == b.to_bits(),
            (Node::Neg(a), Node::Neg(b)) => a.same_tree(b),
            (Node::Binary(o1, a1, b1), Node::Binary(o2, a2, b2)) => {
                o1 == o2 && a1.same_tree(a2) && b1.same_tree(b2)
            }
            (Node::Call(f1, a1), Node::Call(f2, a2)) => {
                f1 == f2 && a1.len() == a2.len() && a1.iter().zip(a2).all(|(x, y)| x.same_tree(y))
            }
            _ => false,
        }
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match &self.node {
            Node::Var(i) => Some(*i),
            Node::Const(_) => None,
            Node::Neg(a) => a.max_var(),
            Node::Binary(_, a, b) => a.max_var().max(b.max_var()),
            Node::Call(_, args) => args.iter().filter_map(Expr::max_var).max(),
        }
    }
}

/// Fully parenthesized; re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Node::Var(i) => write!(f, "x{i}"),
            Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => write!(f, "(-{})", -c),
            Node::Const(c) => write!(f, "{c}"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer / parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(text: &'a str) -> Result<Vec<(Tok, Span)>, ExprError> {
        let mut lx = Lexer { src: text.as_bytes(), pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, span) = lx.next()?;
            let done = tok == Tok::End;
            out.push((tok, span));
            if done {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, Span), ExprError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((Tok::End, Span { start, end: start }));
        };
        let tok = match c {
            b'0'..=b'9' | b'.' => return self.number(start),
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while self
                    .src
                    .get(self.pos)
                    .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
                {
                    self.pos += 1;
                }
                let name = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
                return Ok((Tok::Ident(name.to_string()), Span { start, end: self.pos }));
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c as char),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            _ => {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{}`", c as char),
                })
            }
        };
        self.pos += 1;
        Ok((tok, Span { start, end: self.pos }))
    }

    fn number(&mut self, start: usize) -> Result<(Tok, Span), ExprError> {
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.src.get(lx.pos).is_some_and(u8::is_ascii_digit) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ExprError::Syntax { offset: start, message: "malformed number".into() });
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mut look = self.pos + 1;
            if matches!(self.src.get(look), Some(b'+' | b'-')) {
                look += 1;
            }
            if self.src.get(look).is_some_and(u8::is_ascii_digit) {
                self.pos = look;
                digits(self);
            }
        }
        let text = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })?;
        Ok((Tok::Num(value), Span { start, end: self.pos }))
    }
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Span, ExprError> {
        if *self.peek() == tok {
            Ok(self.bump().1)
        } else {
            Err(ExprError::Syntax { offset: self.span().start, message: format!("expected {what}") })
        }
    }

    fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        let span = Span { start: a.span.start, end: b.span.end };
        Expr { node: Node::Binary(op, Box::new(a), Box::new(b)), span }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = *self.peek() {
            self.bump();
            let rhs = self.term()?;
            lhs = Self::binary(if c == '+' { BinOp::Add } else { BinOp::Sub }, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            lhs = Self::binary(if c == '*' { BinOp::Mul } else { BinOp::Div }, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Op('-') {
            let start = self.bump().1.start;
            let inner = self.unary()?;
            let span = Span { start, end: inner.span.end };
            return Ok(Expr { node: Node::Neg(Box::new(inner)), span });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Self::binary(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let (tok, span) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr { node: Node::Const(v), span }),
            Tok::LParen => {
                let inner = self.expr()?;
                let close = self.expect(Tok::RParen, "`)`")?;
                Ok(Expr { node: inner.node, span: Span { start: span.start, end: close.end } })
            }
            Tok::Ident(name) => self.ident(name, span),
            Tok::End => Err(ExprError::Syntax {
                offset: span.start,
                message: "unexpected end of input".into(),
            }),
            other => Err(ExprError::Syntax {
                offset: span.start,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }

    fn ident(&mut self, name: String, span: Span) -> Result<Expr, ExprError> {
        if let Some(rest) = name.strip_prefix('x') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = rest.parse().map_err(|_| ExprError::UnknownIdentifier {
                    name: name.clone(),
                    offset: span.start,
                })?;
                if index >= self.dim {
                    return Err(ExprError::VariableOutOfRange { index, dim: self.dim, offset: span.start });
                }
                return Ok(Expr { node: Node::Var(index), span });
            }
        }
        match name.as_str() {
            "pi" => return Ok(Expr { node: Node::Const(core::f64::consts::PI), span }),
            "e" => return Ok(Expr { node: Node::Const(core::f64::consts::E), span }),
            _ => {}
        }
        let Some(func) = Func::lookup(&name) else {
            return Err(ExprError::UnknownIdentifier { name, offset: span.start });
        };
        self.expect(Tok::LParen, "`(` after function name")?;
        let mut args = vec![self.expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            args.push(self.expr()?);
        }
        let close = self.expect(Tok::RParen, "`)`")?;
        if args.len() != func.arity() {
            return Err(ExprError::Arity {
                func: func.name(),
                expected: func.arity(),
                got: args.len(),
                offset: span.start,
            });
        }
        Ok(Expr { node: Node::Call(func, args), span: Span { start: span.start, end: close.end } })
    }
}

/// Parses `text` as an expression over `x0..x(dim-1)`.
pub fn parse_expression(text: &str, dim: usize) -> Result<Expr, ExprError> {
    if dim == 0 {
        return Err(ExprError::ZeroDimension);
    }
    let toks = Lexer::tokens(text)?;
    let mut p = Parser { toks, pos: 0, dim };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(ExprError::Syntax {
            offset: p.span().start,
            message: "trailing input".into(),
        });
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Tape

#[derive(Debug, Clone, Copy)]
enum Op {
    Var(usize),
    Const(f64),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    PowConst(f64),
    Call1(Func),
    Max,
    Min,
}

#[derive(Debug, Clone)]
struct Tape {
    ops: Vec<(Op, Span)>,
    depth: usize,
}

impl Tape {
    fn compile(e: &Expr) -> Tape {
        let mut ops = Vec::new();
        let mut depth = 0;
        let mut max_depth = 0;
        Self::emit(e, &mut ops, &mut depth, &mut max_depth);
        Tape { ops, depth: max_depth }
    }

    fn push(ops: &mut Vec<(Op, Span)>, op: Op, span: Span, depth: &mut usize, max: &mut usize, delta: isize) {
        ops.push((op, span));
        *depth = (*depth as isize + delta) as usize;
        *max = (*max).max(*depth);
    }

    fn emit(e: &Expr, ops: &mut Vec<(Op, Span)>, depth: &mut usize, max: &mut usize) {
        match &e.node {
            Node::Var(i) => Self::push(ops, Op::Var(*i), e.span, depth, max, 1),
            Node::Const(c) => Self::push(ops, Op::Const(*c), e.span, depth, max, 1),
            Node::Neg(a) => {
                Self::emit(a, ops, depth, max);
                Self::push(ops, Op::Neg, e.span, depth, max, 0);
            }
            Node::Binary(BinOp::Pow, a, b) if const_value(b).is_some() => {
                Self::emit(a, ops, depth, max);
                let c = const_value(b).unwrap_or(0.0);
                Self::push(ops, Op::PowConst(c), e.span, depth, max, 0);
            }
            Node::Binary(op, a, b) => {
                Self::emit(a, ops, depth, max);
                Self::emit(b, ops, depth, max);
                let op = match op {
                    BinOp::Add => Op::Add,
                    BinOp::Sub => Op::Sub,
                    BinOp::Mul => Op::Mul,
                    BinOp::Div => Op::Div,
                    BinOp::Pow => Op::Pow,
                };
                Self::push(ops, op, e.span, depth, max, -1);
            }
            Node::Call(func, args) => {
                for a in args {
                    Self::emit(a, ops, depth, max);
                }
                match func {
                    Func::Max => Self::push(ops, Op::Max, e.span, depth, max, -1),
                    Func::Min => Self::push(ops, Op::Min, e.span, depth, max, -1),
                    f => Self::push(ops, Op::Call1(*f), e.span, depth, max, 0),
                }
            }
        }
    }
}

fn const_value(e: &Expr) -> Option<f64> {
    match &e.node {
        Node::Const(c) => Some(*c),
        Node::Neg(a) => const_value(a).map(|c| -c),
        _ => None,
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + libm::exp(-t))
    } else {
        let z = libm::exp(t);
        z / (1.0 + z)
    }
}

fn sgn(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn is_integer(c: f64) -> bool {
    libm::trunc(c) == c
}

/// Value and derivative factor of a unary primitive.
fn call1(func: Func, t: f64, span: Span) -> Result<(f64, f64), ExprError> {
    let dom = |op| ExprError::Domain { op, span, arg: t };
    Ok(match func {
        Func::Exp => {
            let v = libm::exp(t);
            (v, v)
        }
        Func::Log => {
            if t <= 0.0 {
                return Err(dom("log"));
            }
            (libm::log(t), 1.0 / t)
        }
        Func::Sin => (libm::sin(t), libm::cos(t)),
        Func::Cos => (libm::cos(t), -libm::sin(t)),
        Func::Abs => (libm::fabs(t), sgn(t)),
        Func::Sgn => (sgn(t), 0.0),
        Func::Sqrt => {
            if t < 0.0 {
                return Err(dom("sqrt"));
            }
            let v = libm::sqrt(t);
            (v, if v > 0.0 { 0.5 / v } else { f64::INFINITY })
        }
        Func::Sigmoid => {
            let s = sigmoid(t);
            (s, s * (1.0 - s))
        }
        Func::Max | Func::Min => unreachable!("binary primitive"),
    })
}

fn pow_const(a: f64, c: f64, span: Span) -> Result<(f64, f64), ExprError> {
    if a < 0.0 && !is_integer(c) {
        return Err(ExprError::Domain { op: "^", span, arg: a });
    }
    if a == 0.0 && c < 0.0 {
        return Err(ExprError::Domain { op: "^", span, arg: a });
    }
    let v = libm::pow(a, c);
    let d = if c == 0.0 {
        0.0
    } else if c == 1.0 {
        1.0
    } else {
        c * libm::pow(a, c - 1.0)
    };
    Ok((v, d))
}

// ---------------------------------------------------------------------------
// ScalarField

/// A differentiable function ℝⁿ → ℝ given by an expression.
#[derive(Debug, Clone)]
pub struct ScalarField {
    dim: usize,
    body: Expr,
    tape: Tape,
    source: String,
    name: Option<String>,
}

impl ScalarField {
    pub fn parse(text: &str, dim: usize) -> Result<Self, ExprError> {
        let body = parse_expression(text, dim)?;
        Ok(Self::from_expr(body, dim, text))
    }

    fn from_expr(body: Expr, dim: usize, source: &str) -> Self {
        let tape = Tape::compile(&body);
        ScalarField { dim, body, tape, source: source.to_string(), name: None }
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn body(&self) -> &Expr {
        &self.body
    }

    /// The text the field was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    fn check_dim(&self, p: &[f64]) -> Result<(), ExprError> {
        if p.len() != self.dim {
            return Err(ExprError::DimensionMismatch { expected: self.dim, got: p.len() });
        }
        Ok(())
    }

    pub fn value(&self, p: &[f64]) -> Result<f64, ExprError> {
        self.check_dim(p)?;
        let mut st: Vec<f64> = Vec::with_capacity(self.tape.depth);
        for &(op, span) in &self.tape.ops {
            match op {
                Op::Var(i) => st.push(p[i]),
                Op::Const(c) => st.push(c),
                Op::Neg => {
                    let a = st.pop().unwrap_or_default();
                    st.push(-a)
                }
                Op::PowConst(c) => {
                    let a = st.pop().unwrap_or_default();
                    st.push(pow_const(a, c, span)?.0)
                }
                Op::Call1(f) => {
                    let a = st.pop().unwrap_or_default();
                    st.push(call1(f, a, span)?.0)
                }
                _ => {
                    let b = st.pop().unwrap_or_default();
                    let a = st.pop().unwrap_or_default();
                    let v = match op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div => {
                            if b == 0.0 {
                                return Err(ExprError::Domain { op: "/", span, arg: b });
                            }
                            a / b
                        }
                        Op::Pow => {
                            if a <= 0.0 {
                                return Err(ExprError::Domain { op: "^", span, arg: a });
                            }
                            libm::pow(a, b)
                        }
                        Op::Max => a.max(b),
                        Op::Min => a.min(b),
                        _ => unreachable!(),
                    };
                    st.push(v);
                }
            }
        }
        Ok(st.pop().unwrap_or_default())
    }

    /// Value and exact gradient; the gradient is written into `grad`.
    pub fn value_grad(&self, p: &[f64], grad: &mut [f64]) -> Result<f64, ExprError> {
        self.check_dim(p)?;
        if grad.len() != self.dim {
            return Err(ExprError::DimensionMismatch { expected: self.dim, got: grad.len() });
        }
        let n = self.dim;
        let mut vals: Vec<f64> = Vec::with_capacity(self.tape.depth);
        let mut ders: Vec<f64> = vec![0.0; self.tape.depth.max(1) * n];
        for &(op, span) in &self.tape.ops {
            let top = vals.len();
            match op {
                Op::Var(i) => {
                    vals.push(p[i]);
                    let d = &mut ders[top * n..(top + 1) * n];
                    d.fill(0.0);
                    d[i] = 1.0;
                }
                Op::Const(c) => {
                    vals.push(c);
                    ders[top * n..(top + 1) * n].fill(0.0);
                }
                Op::Neg => {
                    let k = top - 1;
                    vals[k] = -vals[k];
                    ders[k * n..(k + 1) * n].iter_mut().for_each(|d| *d = -*d);
                }
                Op::PowConst(c) => {
                    let k = top - 1;
                    let (v, dv) = pow_const(vals[k], c, span)?;
                    vals[k] = v;
                    scale(&mut ders[k * n..(k + 1) * n], dv, span)?;
                }
                Op::Call1(f) => {
                    let k = top - 1;
                    let (v, dv) = call1(f, vals[k], span)?;
                    vals[k] = v;
                    scale(&mut ders[k * n..(k + 1) * n], dv, span)?;
                }
                _ => {
                    let k = top - 2;
                    let b = vals.pop().unwrap_or_default();
                    let a = vals[k];
                    let (lo, hi) = ders.split_at_mut((k + 1) * n);
                    let da = &mut lo[k * n..];
                    let db = &hi[..n];
                    let v = match op {
                        Op::Add => {
                            da.iter_mut().zip(db).for_each(|(x, y)| *x += y);
                            a + b
                        }
                        Op::Sub => {
                            da.iter_mut().zip(db).for_each(|(x, y)| *x -= y);
                            a - b
                        }
                        Op::Mul => {
                            da.iter_mut().zip(db).for_each(|(x, y)| *x = *x * b + a * y);
                            a * b
                        }
                        Op::Div => {
                            if b == 0.0 {
                                return Err(ExprError::Domain { op: "/", span, arg: b });
                            }
                            da.iter_mut().zip(db).for_each(|(x, y)| *x = (*x * b - a * y) / (b * b));
                            a / b
                        }
                        Op::Pow => {
                            if a <= 0.0 {
                                return Err(ExprError::Domain { op: "^", span, arg: a });
                            }
                            let v = libm::pow(a, b);
                            let ln = libm::log(a);
                            da.iter_mut().zip(db).for_each(|(x, y)| *x = v * (y * ln + b * *x / a));
                            v
                        }
                        Op::Max | Op::Min => {
                            let take_a = if matches!(op, Op::Max) { a > b } else { a < b };
                            let take_b = if matches!(op, Op::Max) { b > a } else { b < a };
                            if take_b {
                                da.copy_from_slice(db);
                            } else if !take_a {
                                da.iter_mut().zip(db).for_each(|(x, y)| {
                                    if *x != *y {
                                        *x = 0.0
                                    }
                                });
                            }
                            if matches!(op, Op::Max) {
                                a.max(b)
                            } else {
                                a.min(b)
                            }
                        }
                        _ => unreachable!(),
                    };
                    vals[k] = v;
                }
            }
        }
        grad.copy_from_slice(&ders[..n]);
        Ok(vals.pop().unwrap_or_default())
    }

    pub fn gradient(&self, p: &[f64]) -> Result<Vec<f64>, ExprError> {
        let mut g = vec![0.0; self.dim];
        self.value_grad(p, &mut g)?;
        Ok(g)
    }

    /// Max over coordinates of the relative error between the dual-number
    /// gradient and a central difference with step `h`. The relative error is
    /// taken against `max(|g_i|, 1)` so vanishing partials compare absolutely.
    pub fn finite_difference_check(&self, p: &[f64], h: f64) -> Result<f64, ExprError> {
        let g = self.gradient(p)?;
        let mut q = p.to_vec();
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            q[i] = p[i] + h;
            let fp = self.value(&q)?;
            q[i] = p[i] - h;
            let fm = self.value(&q)?;
            q[i] = p[i];
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max(libm::fabs(fd - g[i]) / libm::fabs(g[i]).max(1.0));
        }
        Ok(worst)
    }
}

fn scale(d: &mut [f64], factor: f64, span: Span) -> Result<(), ExprError> {
    if !factor.is_finite() {
        if d.iter().all(|x| *x == 0.0) {
            return Ok(());
        }
        return Err(ExprError::Domain { op: "derivative", span, arg: factor });
    }
    d.iter_mut().for_each(|x| *x *= factor);
    Ok(())
}

impl fmt::Display for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.name {
            Some(n) => write!(f, "{n}: {}", self.source),
            None => write!(f, "{}", self.source),
        }
    }
}

// ---------------------------------------------------------------------------
// Builtins

/// A registered example field.
#[derive(Debug, Clone, Copy)]
pub struct BuiltinInfo {
    pub name: &'static str,
    pub dim: usize,
    pub formula: &'static str,
    pub description: &'static str,
}

pub const BUILTINS: &[BuiltinInfo] = &[
    BuiltinInfo {
        name: "fig1_invex",
        dim: 2,
        formula: "sigmoid(x0)*(x1^2-1)^2",
        description: "invex, minima on the lines x1 = ±1, not increasing at infinity",
    },
    BuiltinInfo {
        name: "fig3_twosided_pl",
        dim: 2,
        formula: "max(abs(x0)-1,0)^2 + 3*sin(max(abs(x1)-1,0))^2*sin(max(abs(x0)-1,0))^2 \
                  - 4*max(abs(x1)-1,0)^2 - 10*sin(max(abs(x1)-1,0))^2",
        description: "a^2 + 3 sin^2(b) sin^2(a) - 4 b^2 - 10 sin^2(b), a = max(|x0|-1,0), b = max(|x1|-1,0)",
    },
    BuiltinInfo {
        name: "fig4_u1",
        dim: 2,
        formula: "-0.5*x0^2 + x0*x1",
        description: "player-1 utility, best response a1 = a2",
    },
    BuiltinInfo {
        name: "fig4_u2",
        dim: 2,
        formula: "-0.5*x1^2 + x1*(x0^3 - 2*x0)",
        description: "player-2 utility, best response a2 = a1^3 - 2 a1",
    },
    BuiltinInfo {
        name: "appB_exp",
        dim: 2,
        formula: "max(abs(x0)-1,0)^2*exp(-max(abs(x1)-1,0)^2) - max(abs(x1)-1,0)^2",
        description: "a^2 exp(-b^2) - b^2, a = max(|x0|-1,0), b = max(|x1|-1,0)",
    },
    BuiltinInfo {
        name: "doublewell",
        dim: 2,
        formula: "(x0^2-1)^2 + x1^2",
        description: "two minima at (±1, 0) separated by a pass of height 1 at the origin",
    },
    BuiltinInfo {
        name: "quadratic",
        dim: 2,
        formula: "x0^2 + x1^2",
        description: "strongly convex bowl",
    },
];

/// Looks up a registered field by name.
pub fn builtin(name: &str) -> Result<ScalarField, ExprError> {
    let Some(info) = BUILTINS.iter().find(|b| b.name == name) else {
        let available = BUILTINS.iter().map(|b| b.name).collect::<Vec<_>>().join(", ");
        return Err(ExprError::UnknownBuiltin { name: name.to_string(), available });
    };
    Ok(ScalarField::parse(info.formula, info.dim)?.with_name(info.name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        libm::fabs(a - b) <= tol
    }

    #[test]
    fn parses_sum_of_squares() {
        let e = parse_expression("x0^2 + x1^2", 2).unwrap();
        match e.node {
            Node::Binary(BinOp::Add, a, b) => {
                assert!(matches!(a.node, Node::Binary(BinOp::Pow, _, _)));
                assert!(matches!(b.node, Node::Binary(BinOp::Pow, _, _)));
            }
            other => panic!("unexpected tree {other:?}"),
        }
    }

    #[test]
    fn variable_out_of_range() {
        let err = parse_expression("x2", 2).unwrap_err();
        assert_eq!(err, ExprError::VariableOutOfRange { index: 2, dim: 2, offset: 0 });
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse_expression("x0 + * x1", 2).unwrap_err() {
            ExprError::Syntax { offset, .. } => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        match parse_expression("sin(x0", 1).unwrap_err() {
            ExprError::Syntax { offset, .. } => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_expression("foo(x0)", 1).unwrap_err(),
            ExprError::UnknownIdentifier { .. }
        ));
        assert!(matches!(
            parse_expression("max(x0)", 1).unwrap_err(),
            ExprError::Arity { expected: 2, got: 1, .. }
        ));
        assert!(matches!(parse_expression("x0 $", 1).unwrap_err(), ExprError::Syntax { offset: 3, .. }));
    }

    #[test]
    fn precedence_and_associativity() {
        let f = ScalarField::parse("-x0^2", 1).unwrap();
        assert_eq!(f.value(&[3.0]).unwrap(), -9.0);
        let f = ScalarField::parse("2^3^2", 1).unwrap();
        assert_eq!(f.value(&[0.0]).unwrap(), 512.0);
        let f = ScalarField::parse("8/4/2 - 1 - 1", 1).unwrap();
        assert_eq!(f.value(&[0.0]).unwrap(), -1.0);
        let f = ScalarField::parse("2^-1 + 1.5e1 + 2E-1", 1).unwrap();
        assert!(close(f.value(&[0.0]).unwrap(), 15.7, 1e-12));
    }

    #[test]
    fn display_reparses_to_same_tree() {
        for b in BUILTINS {
            let f = builtin(b.name).unwrap();
            let printed = f.body().to_string();
            let again = parse_expression(&printed, b.dim).unwrap();
            assert!(again.same_tree(f.body()), "{printed}");
        }
    }

    #[test]
    fn fig1_field() {
        let f = builtin("fig1_invex").unwrap();
        assert_eq!(f.value(&[0.0, 0.0]).unwrap(), 0.5);
        let g = f.gradient(&[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.25, 0.0]);
    }

    #[test]
    fn plateau_fields() {
        let f = builtin("fig3_twosided_pl").unwrap();
        assert!(close(f.value(&[2.0, 0.0]).unwrap(), 1.0, 1e-15));
        assert_eq!(f.gradient(&[0.5, 0.5]).unwrap(), vec![0.0, 0.0]);
        let g = builtin("appB_exp").unwrap();
        assert_eq!(g.value(&[0.0, 2.0]).unwrap(), -1.0);
    }

    #[test]
    fn quadratic_gradient() {
        let f = builtin("quadratic").unwrap();
        assert_eq!(f.gradient(&[1.0, 2.0]).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn kink_convention() {
        let f = ScalarField::parse("max(x0,0)", 1).unwrap();
        assert_eq!(f.gradient(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(f.gradient(&[1.0]).unwrap(), vec![1.0]);
        let f = ScalarField::parse("max(0,x0)", 1).unwrap();
        assert_eq!(f.gradient(&[0.0]).unwrap(), vec![0.0]);
        let f = ScalarField::parse("abs(x0)", 1).unwrap();
        assert_eq!(f.gradient(&[0.0]).unwrap(), vec![0.0]);
        let f = ScalarField::parse("sgn(x0)*x1", 2).unwrap();
        assert_eq!(f.gradient(&[-2.0, 3.0]).unwrap(), vec![0.0, -1.0]);
        let f = ScalarField::parse("min(x0,x0)", 1).unwrap();
        assert_eq!(f.gradient(&[0.3]).unwrap(), vec![1.0]);
    }

    #[test]
    fn domain_errors_report_location() {
        let f = ScalarField::parse("1 + sqrt(x0)", 1).unwrap();
        match f.value(&[-1.0]).unwrap_err() {
            ExprError::Domain { op: "sqrt", span, .. } => assert_eq!(span, Span { start: 4, end: 12 }),
            other => panic!("{other:?}"),
        }
        let f = ScalarField::parse("1/x0", 1).unwrap();
        assert!(matches!(f.value(&[0.0]), Err(ExprError::Domain { op: "/", .. })));
        assert!(matches!(f.gradient(&[0.0]), Err(ExprError::Domain { op: "/", .. })));
        let f = ScalarField::parse("x0^0.5", 1).unwrap();
        assert!(matches!(f.value(&[-4.0]), Err(ExprError::Domain { op: "^", .. })));
        let f = ScalarField::parse("x0^3", 1).unwrap();
        assert_eq!(f.value(&[-2.0]).unwrap(), -8.0);
        assert_eq!(f.gradient(&[-2.0]).unwrap(), vec![12.0]);
        assert!(matches!(f.value(&[1.0, 2.0]), Err(ExprError::DimensionMismatch { .. })));
    }

    #[test]
    fn general_power_and_log() {
        let f = ScalarField::parse("x0^x1 + log(x0)", 2).unwrap();
        let p = [2.0, 3.0];
        assert!(close(f.value(&p).unwrap(), 8.0 + libm::log(2.0), 1e-12));
        let g = f.gradient(&p).unwrap();
        assert!(close(g[0], 3.0 * 4.0 + 0.5, 1e-12));
        assert!(close(g[1], 8.0 * libm::log(2.0), 1e-12));
    }

    #[test]
    fn sigmoid_is_stable_for_large_arguments() {
        let f = ScalarField::parse("sigmoid(x0)", 1).unwrap();
        assert_eq!(f.value(&[800.0]).unwrap(), 1.0);
        assert_eq!(f.value(&[-800.0]).unwrap(), 0.0);
        assert!(f.gradient(&[-800.0]).unwrap()[0].is_finite());
    }

    #[test]
    fn unknown_builtin_lists_names() {
        match builtin("nope").unwrap_err() {
            ExprError::UnknownBuiltin { available, .. } => {
                assert!(available.contains("doublewell") && available.contains("fig4_u2"))
            }
            other => panic!("{other:?}"),
        }
        let f = builtin("doublewell").unwrap();
        assert_eq!(f.value(&[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(f.name(), Some("doublewell"));
    }

    #[test]
    fn finite_difference_agreement() {
        let q = builtin("quadratic").unwrap();
        assert!(q.finite_difference_check(&[1.0, 1.0], 1e-4).unwrap() <= 1e-8);
        let f = builtin("fig3_twosided_pl").unwrap();
        assert!(f.finite_difference_check(&[1.7, 1.3], 1e-5).unwrap() <= 1e-5);
        let g = builtin("appB_exp").unwrap();
        assert!(g.finite_difference_check(&[1.5, 1.5], 1e-5).unwrap() <= 1e-5);
    }
}
