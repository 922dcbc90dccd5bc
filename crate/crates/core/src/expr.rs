//! Scalar expressions over the chart variables `t`, `x1..x3` and the jet
//! (velocity) variables `v1..v3`.
//!
//! Expressions are immutable shared trees. Constructors fold constants and
//! drop trivial identities so symbolic derivatives stay compact, and
//! [`Tape`] compiles a tree into a flat instruction list with common
//! subexpressions merged for repeated numeric evaluation.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use thiserror::Error;

/// Number of variable slots: `t`, three positions, three velocities.
pub const NVARS: usize = 7;

/// A chart or jet variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u8);

impl Var {
    pub const T: Var = Var(0);

    /// Spatial coordinate `x^{i+1}` (zero-based axis).
    pub fn x(axis: usize) -> Var {
        assert!(axis < 3, "spatial axis out of range");
        Var(1 + axis as u8)
    }

    /// Velocity (jet) coordinate `x^{i+1}_0` (zero-based axis).
    pub fn v(axis: usize) -> Var {
        assert!(axis < 3, "velocity axis out of range");
        Var(4 + axis as u8)
    }

    pub fn slot(self) -> usize {
        self.0 as usize
    }

    pub fn is_velocity(self) -> bool {
        self.0 >= 4
    }

    pub fn name(self) -> &'static str {
        ["t", "x1", "x2", "x3", "v1", "v2", "v3"][self.0 as usize]
    }

    fn from_name(name: &str) -> Option<Var> {
        Some(match name {
            "t" => Var::T,
            "x1" | "x" => Var::x(0),
            "x2" | "y" => Var::x(1),
            "x3" | "z" => Var::x(2),
            "v1" => Var::v(0),
            "v2" => Var::v(1),
            "v3" => Var::v(2),
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Ln,
}

impl Func {
    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Sqrt => x.sqrt(),
            Func::Ln => x.ln(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
        }
    }
}

#[derive(Debug)]
enum Node {
    Const(f64),
    Var(Var),
    Add(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, Expr),
    Neg(Expr),
    Func(Func, Expr),
}

/// Immutable scalar expression.
#[derive(Clone, Debug)]
pub struct Expr(Arc<Node>);

impl Expr {
    fn node(n: Node) -> Expr {
        Expr(Arc::new(n))
    }

    fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn constant(c: f64) -> Expr {
        Expr::node(Node::Const(c))
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    pub fn var(v: Var) -> Expr {
        Expr::node(Node::Var(v))
    }

    pub fn t() -> Expr {
        Expr::var(Var::T)
    }

    pub fn x(axis: usize) -> Expr {
        Expr::var(Var::x(axis))
    }

    pub fn v(axis: usize) -> Expr {
        Expr::var(Var::v(axis))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn pow(&self, exponent: &Expr) -> Expr {
        match (self.as_const(), exponent.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a.powf(b)),
            (_, Some(0.0)) => Expr::one(),
            (_, Some(1.0)) => self.clone(),
            (Some(1.0), _) => Expr::one(),
            _ => Expr::node(Node::Pow(self.clone(), exponent.clone())),
        }
    }

    pub fn powi(&self, n: i32) -> Expr {
        self.pow(&Expr::constant(n as f64))
    }

    pub fn square(&self) -> Expr {
        self * self
    }

    pub fn func(f: Func, arg: &Expr) -> Expr {
        match arg.as_const() {
            Some(c) => Expr::constant(f.apply(c)),
            None => Expr::node(Node::Func(f, arg.clone())),
        }
    }

    pub fn sin(&self) -> Expr {
        Expr::func(Func::Sin, self)
    }

    pub fn cos(&self) -> Expr {
        Expr::func(Func::Cos, self)
    }

    pub fn exp(&self) -> Expr {
        Expr::func(Func::Exp, self)
    }

    pub fn sqrt(&self) -> Expr {
        Expr::func(Func::Sqrt, self)
    }

    pub fn ln(&self) -> Expr {
        Expr::func(Func::Ln, self)
    }

    /// Whether the expression mentions `v` anywhere.
    pub fn depends_on(&self, v: Var) -> bool {
        let mut seen = HashMap::new();
        self.depends_memo(v, &mut seen)
    }

    fn depends_memo(&self, v: Var, seen: &mut HashMap<usize, bool>) -> bool {
        if let Some(&d) = seen.get(&self.id()) {
            return d;
        }
        let d = match &*self.0 {
            Node::Const(_) => false,
            Node::Var(w) => *w == v,
            Node::Add(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.depends_memo(v, seen) || b.depends_memo(v, seen)
            }
            Node::Neg(a) | Node::Func(_, a) => a.depends_memo(v, seen),
        };
        seen.insert(self.id(), d);
        d
    }

    /// Symbolic partial derivative.
    pub fn diff(&self, v: Var) -> Expr {
        let mut memo = HashMap::new();
        self.diff_memo(v, &mut memo)
    }

    fn diff_memo(&self, v: Var, memo: &mut HashMap<usize, Expr>) -> Expr {
        if let Some(d) = memo.get(&self.id()) {
            return d.clone();
        }
        let d = match &*self.0 {
            Node::Const(_) => Expr::zero(),
            Node::Var(w) => {
                if *w == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Add(a, b) => a.diff_memo(v, memo) + b.diff_memo(v, memo),
            Node::Neg(a) => -a.diff_memo(v, memo),
            Node::Mul(a, b) => {
                let da = a.diff_memo(v, memo);
                let db = b.diff_memo(v, memo);
                &da * b + a * &db
            }
            Node::Div(a, b) => {
                let da = a.diff_memo(v, memo);
                let db = b.diff_memo(v, memo);
                if db.is_zero() {
                    &da / b
                } else {
                    (&da * b - a * &db) / b.square()
                }
            }
            Node::Pow(a, b) => {
                let da = a.diff_memo(v, memo);
                let db = b.diff_memo(v, memo);
                if db.is_zero() {
                    let n = b.clone();
                    &n * &a.pow(&(&n - 1.0)) * &da
                } else {
                    // d(a^b) = a^b (b' ln a + b a'/a)
                    self * &(&db * &a.ln() + b * &da / a)
                }
            }
            Node::Func(f, a) => {
                let da = a.diff_memo(v, memo);
                if da.is_zero() {
                    Expr::zero()
                } else {
                    let outer = match f {
                        Func::Sin => a.cos(),
                        Func::Cos => -a.sin(),
                        Func::Exp => self.clone(),
                        Func::Sqrt => 0.5 / self,
                        Func::Ln => 1.0 / a,
                    };
                    outer * da
                }
            }
        };
        memo.insert(self.id(), d.clone());
        d
    }

    /// Replace every occurrence of `v` by `with`.
    pub fn subs(&self, v: Var, with: &Expr) -> Expr {
        self.subs_many(&[(v, with.clone())])
    }

    pub fn subs_many(&self, pairs: &[(Var, Expr)]) -> Expr {
        let mut memo = HashMap::new();
        self.subs_memo(pairs, &mut memo)
    }

    fn subs_memo(&self, pairs: &[(Var, Expr)], memo: &mut HashMap<usize, Expr>) -> Expr {
        if let Some(e) = memo.get(&self.id()) {
            return e.clone();
        }
        let e = match &*self.0 {
            Node::Const(_) => self.clone(),
            Node::Var(w) => pairs
                .iter()
                .find(|(p, _)| p == w)
                .map(|(_, e)| e.clone())
                .unwrap_or_else(|| self.clone()),
            Node::Add(a, b) => a.subs_memo(pairs, memo) + b.subs_memo(pairs, memo),
            Node::Mul(a, b) => a.subs_memo(pairs, memo) * b.subs_memo(pairs, memo),
            Node::Div(a, b) => a.subs_memo(pairs, memo) / b.subs_memo(pairs, memo),
            Node::Pow(a, b) => a.subs_memo(pairs, memo).pow(&b.subs_memo(pairs, memo)),
            Node::Neg(a) => -a.subs_memo(pairs, memo),
            Node::Func(f, a) => Expr::func(*f, &a.subs_memo(pairs, memo)),
        };
        memo.insert(self.id(), e.clone());
        e
    }

    /// Direct tree-walking evaluation; prefer [`Tape`] for hot loops.
    pub fn eval(&self, vars: &[f64; NVARS]) -> f64 {
        let mut memo = HashMap::new();
        self.eval_memo(vars, &mut memo)
    }

    fn eval_memo(&self, vars: &[f64; NVARS], memo: &mut HashMap<usize, f64>) -> f64 {
        if let Some(&x) = memo.get(&self.id()) {
            return x;
        }
        let x = match &*self.0 {
            Node::Const(c) => *c,
            Node::Var(v) => vars[v.slot()],
            Node::Add(a, b) => a.eval_memo(vars, memo) + b.eval_memo(vars, memo),
            Node::Mul(a, b) => a.eval_memo(vars, memo) * b.eval_memo(vars, memo),
            Node::Div(a, b) => a.eval_memo(vars, memo) / b.eval_memo(vars, memo),
            Node::Pow(a, b) => pow_eval(a.eval_memo(vars, memo), b.eval_memo(vars, memo)),
            Node::Neg(a) => -a.eval_memo(vars, memo),
            Node::Func(f, a) => f.apply(a.eval_memo(vars, memo)),
        };
        memo.insert(self.id(), x);
        x
    }

    pub fn compile(&self) -> Tape {
        Tape::new(self)
    }

    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        Parser::new(src).parse_all()
    }
}

fn pow_eval(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(v) => write!(f, "{}", v.name()),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Func(g, a) => write!(f, "{}({a})", g.name()),
        }
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Expr {
        Expr::constant(c)
    }
}

fn add(a: &Expr, b: &Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::constant(x + y),
        (Some(0.0), _) => b.clone(),
        (_, Some(0.0)) => a.clone(),
        _ => Expr::node(Node::Add(a.clone(), b.clone())),
    }
}

fn mul(a: &Expr, b: &Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::constant(x * y),
        (Some(0.0), _) | (_, Some(0.0)) => Expr::zero(),
        (Some(1.0), _) => b.clone(),
        (_, Some(1.0)) => a.clone(),
        (Some(-1.0), _) => neg(b),
        (_, Some(-1.0)) => neg(a),
        _ => Expr::node(Node::Mul(a.clone(), b.clone())),
    }
}

fn div(a: &Expr, b: &Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::constant(x / y),
        (Some(0.0), _) => Expr::zero(),
        (_, Some(1.0)) => a.clone(),
        _ => Expr::node(Node::Div(a.clone(), b.clone())),
    }
}

fn neg(a: &Expr) -> Expr {
    match &*a.0 {
        Node::Const(c) => Expr::constant(-c),
        Node::Neg(inner) => inner.clone(),
        _ => Expr::node(Node::Neg(a.clone())),
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $f:expr) => {
        impl $tr<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $f(&self, &rhs)
            }
        }
        impl $tr<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $f(&self, rhs)
            }
        }
        impl $tr<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $f(self, &rhs)
            }
        }
        impl $tr<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $f(self, rhs)
            }
        }
        impl $tr<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $f(&self, &Expr::constant(rhs))
            }
        }
        impl $tr<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $f(self, &Expr::constant(rhs))
            }
        }
        impl $tr<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $f(&Expr::constant(self), &rhs)
            }
        }
        impl $tr<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $f(&Expr::constant(self), rhs)
            }
        }
    };
}

fn sub(a: &Expr, b: &Expr) -> Expr {
    add(a, &neg(b))
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);
binop!(Div, div, div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        neg(&self)
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        neg(self)
    }
}

impl std::iter::Sum for Expr {
    fn sum<I: Iterator<Item = Expr>>(iter: I) -> Expr {
        iter.fold(Expr::zero(), |acc, e| acc + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Instr {
    Const(f64),
    Var(u8),
    Add(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, u32),
    Powi(u32, i32),
    Neg(u32),
    Func(Func, u32),
}

#[derive(PartialEq, Eq, Hash)]
enum Key {
    Const(u64),
    Var(u8),
    Bin(u8, u32, u32),
    Powi(u32, i32),
    Un(u8, u32),
}

/// Flat, deduplicated evaluation program for an [`Expr`].
#[derive(Clone, Debug)]
pub struct Tape {
    code: Vec<Instr>,
}

impl Tape {
    pub fn new(expr: &Expr) -> Tape {
        let mut builder = TapeBuilder::default();
        builder.emit(expr);
        Tape { code: builder.code }
    }

    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    pub fn eval(&self, vars: &[f64; NVARS]) -> f64 {
        let mut scratch = Vec::with_capacity(self.code.len());
        self.eval_with(vars, &mut scratch)
    }

    /// Evaluate reusing a caller-provided register buffer.
    pub fn eval_with(&self, vars: &[f64; NVARS], regs: &mut Vec<f64>) -> f64 {
        regs.clear();
        for ins in &self.code {
            let r = |i: &u32| regs[*i as usize];
            let x = match ins {
                Instr::Const(c) => *c,
                Instr::Var(v) => vars[*v as usize],
                Instr::Add(a, b) => r(a) + r(b),
                Instr::Mul(a, b) => r(a) * r(b),
                Instr::Div(a, b) => r(a) / r(b),
                Instr::Pow(a, b) => r(a).powf(r(b)),
                Instr::Powi(a, n) => r(a).powi(*n),
                Instr::Neg(a) => -r(a),
                Instr::Func(f, a) => f.apply(r(a)),
            };
            regs.push(x);
        }
        *regs.last().expect("tape is never empty")
    }
}

#[derive(Default)]
struct TapeBuilder {
    code: Vec<Instr>,
    by_key: HashMap<Key, u32>,
    by_ptr: HashMap<usize, u32>,
}

impl TapeBuilder {
    fn push(&mut self, key: Key, ins: Instr) -> u32 {
        if let Some(&i) = self.by_key.get(&key) {
            return i;
        }
        let i = self.code.len() as u32;
        self.code.push(ins);
        self.by_key.insert(key, i);
        i
    }

    fn emit(&mut self, e: &Expr) -> u32 {
        if let Some(&i) = self.by_ptr.get(&e.id()) {
            return i;
        }
        let i = match &*e.0 {
            Node::Const(c) => self.push(Key::Const(c.to_bits()), Instr::Const(*c)),
            Node::Var(v) => self.push(Key::Var(v.0), Instr::Var(v.0)),
            Node::Add(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                let (lo, hi) = (a.min(b), a.max(b));
                self.push(Key::Bin(0, lo, hi), Instr::Add(lo, hi))
            }
            Node::Mul(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                let (lo, hi) = (a.min(b), a.max(b));
                self.push(Key::Bin(1, lo, hi), Instr::Mul(lo, hi))
            }
            Node::Div(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                self.push(Key::Bin(2, a, b), Instr::Div(a, b))
            }
            Node::Pow(a, b) => {
                let ai = self.emit(a);
                match b.as_const() {
                    Some(n) if n.fract() == 0.0 && n.abs() <= 64.0 => {
                        self.push(Key::Powi(ai, n as i32), Instr::Powi(ai, n as i32))
                    }
                    _ => {
                        let bi = self.emit(b);
                        self.push(Key::Bin(3, ai, bi), Instr::Pow(ai, bi))
                    }
                }
            }
            Node::Neg(a) => {
                let a = self.emit(a);
                self.push(Key::Un(0, a), Instr::Neg(a))
            }
            Node::Func(f, a) => {
                let a = self.emit(a);
                let tag = 1 + *f as u8;
                self.push(Key::Un(tag, a), Instr::Func(*f, a))
            }
        };
        self.by_ptr.insert(e.id(), i);
        i
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("expression parse error at column {column}: {message}")]
pub struct ParseError {
    /// One-based character column.
    pub column: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> Parser {
        Parser {
            tokens: Vec::new(),
            pos: 0,
        }
        .lexed(src)
    }

    fn lexed(mut self, src: &str) -> Parser {
        let chars: Vec<char> = src.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
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
                let tok = match text.parse::<f64>() {
                    Ok(x) => Token::Num(x),
                    Err(_) => Token::Ident(text),
                };
                self.tokens.push((tok, col));
            } else if c.is_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                self.tokens
                    .push((Token::Ident(chars[start..i].iter().collect()), col));
            } else {
                self.tokens.push((Token::Op(c), col));
                i += 1;
            }
        }
        self.tokens.push((Token::End, chars.len() + 1));
        self
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos].0
    }

    fn column(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            column: self.column(),
            message: message.into(),
        })
    }

    fn parse_all(mut self) -> Result<Expr, ParseError> {
        let e = self.expr()?;
        match self.peek() {
            Token::End => Ok(e),
            t => self.err(format!("unexpected {t:?}")),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Token::Op('+') => {
                    self.pos += 1;
                    lhs = lhs + self.term()?;
                }
                Token::Op('-') => {
                    self.pos += 1;
                    lhs = lhs - self.term()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Token::Op('*') => {
                    self.pos += 1;
                    lhs = lhs * self.unary()?;
                }
                Token::Op('/') => {
                    self.pos += 1;
                    lhs = lhs / self.unary()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    // unary := ('-'|'+') unary | power
    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Token::Op('-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Token::Op('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // power := atom ('^' unary)?   (right associative)
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Token::Op('^') = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(base.pow(&exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Token::Num(x) => {
                self.pos += 1;
                Ok(Expr::constant(x))
            }
            Token::Op('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Token::Ident(name) => {
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "sqrt" => Some(Func::Sqrt),
                    "ln" => Some(Func::Ln),
                    _ => None,
                };
                if let Some(f) = func {
                    self.pos += 1;
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::func(f, &arg));
                }
                if name == "pi" {
                    self.pos += 1;
                    return Ok(Expr::constant(std::f64::consts::PI));
                }
                match Var::from_name(&name) {
                    Some(v) => {
                        self.pos += 1;
                        Ok(Expr::var(v))
                    }
                    None => self.err(format!("unknown identifier `{name}`")),
                }
            }
            Token::End => self.err("unexpected end of input"),
            Token::Op(c) => self.err(format!("unexpected `{c}`")),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if *self.peek() == Token::Op(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }
}

/// Build a variable vector from time, position and velocity.
pub fn point_vars(t: f64, x: &[f64], v: &[f64]) -> [f64; NVARS] {
    let mut out = [0.0; NVARS];
    out[0] = t;
    out[1..1 + x.len()].copy_from_slice(x);
    out[4..4 + v.len()].copy_from_slice(v);
    out
}
