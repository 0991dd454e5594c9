//! Expression language for Lagrangians `L(t, u0, ..., ur)`.
//!
//! The grammar (see `docs/grammar.md`) has the usual arithmetic operators,
//! right-associative `^` binding tighter than unary minus, and the
//! functions `sin cos exp log sqrt abs sign`. Parsed expressions can be
//! evaluated and differentiated symbolically with respect to any `u_i`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    /// Derivative of `abs`; `sign(0) = 0`.
    Sign,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// The independent variable `t`.
    Time,
    /// `u_i`.
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

// ---------------------------------------------------------------------------
// tokenizer

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

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((Tok::Op(c as char), i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                out.push((Tok::Comma, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| Error::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(Error::Syntax {
                    offset: i,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// parser

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    order: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Tok::Op('-') = self.peek() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let (tok, offset) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                match self.peek() {
                    Tok::RParen => {
                        self.bump();
                        Ok(e)
                    }
                    _ => self.syntax("expected `)`"),
                }
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    return self.call(name, offset);
                }
                self.variable(name, offset)
            }
            Tok::End => Err(Error::Syntax {
                offset,
                message: "unexpected end of input".into(),
            }),
            other => Err(Error::Syntax {
                offset,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }

    fn variable(&self, name: String, offset: usize) -> Result<Expr> {
        if name == "t" {
            return Ok(Expr::Time);
        }
        if Func::from_name(&name).is_some() {
            return Err(Error::Syntax {
                offset,
                message: format!("function `{name}` must be called with parentheses"),
            });
        }
        if let Some(digits) = name.strip_prefix('u') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                if let Ok(i) = digits.parse::<usize>() {
                    if i <= self.order {
                        return Ok(Expr::Var(i));
                    }
                }
            }
        }
        Err(Error::UnknownIdentifier { name, offset })
    }

    fn call(&mut self, name: String, offset: usize) -> Result<Expr> {
        let func = Func::from_name(&name).ok_or_else(|| Error::UnknownIdentifier {
            name: name.clone(),
            offset,
        })?;
        self.bump(); // `(`
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                args.push(self.expr()?);
                match self.peek() {
                    Tok::Comma => {
                        self.bump();
                    }
                    Tok::RParen => break,
                    _ => return self.syntax("expected `,` or `)`"),
                }
            }
        }
        self.bump(); // `)`
        if args.len() != 1 {
            return Err(Error::Arity {
                name,
                expected: 1,
                found: args.len(),
            });
        }
        Ok(Expr::Call(func, Box::new(args.pop().unwrap())))
    }
}

/// Parses `source` for a Lagrangian of order `r`: variables `t`, `u0..ur`.
pub fn parse(source: &str, r: usize) -> Result<Expr> {
    let mut p = Parser {
        toks: tokenize(source)?,
        pos: 0,
        order: r,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.syntax("unexpected trailing input");
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// evaluation

fn pow(base: f64, exp: f64) -> Result<f64> {
    if base == 0.0 && exp < 0.0 {
        return Err(Error::Eval(format!("0^{exp}")));
    }
    if base < 0.0 && exp.fract() != 0.0 {
        return Err(Error::Eval(format!("({base})^{exp} is not real")));
    }
    Ok(base.powf(exp))
}

impl Expr {
    pub fn eval(&self, t: f64, u: &[f64]) -> Result<f64> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Time => t,
            Expr::Var(i) => *u
                .get(*i)
                .ok_or_else(|| Error::Eval(format!("u{i} is not bound ({} values)", u.len())))?,
            Expr::Neg(a) => -a.eval(t, u)?,
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.eval(t, u)?, b.eval(t, u)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(Error::Eval("division by zero".into()));
                        }
                        x / y
                    }
                    BinOp::Pow => pow(x, y)?,
                }
            }
            Expr::Call(f, a) => {
                let x = a.eval(t, u)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(Error::Eval(format!("log of non-positive {x}")));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(Error::Eval(format!("sqrt of negative {x}")));
                        }
                        x.sqrt()
                    }
                    Func::Abs => x.abs(),
                    Func::Sign => {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
        };
        if !v.is_finite() {
            return Err(Error::Eval(format!("non-finite result evaluating {self}")));
        }
        Ok(v)
    }

    /// Largest `u` index appearing in the expression.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Var(i) => Some(*i),
            Expr::Num(_) | Expr::Time => None,
            Expr::Neg(a) | Expr::Call(_, a) => a.max_var(),
            Expr::Bin(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn depends_on(&self, i: usize) -> bool {
        match self {
            Expr::Var(j) => *j == i,
            Expr::Num(_) | Expr::Time => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(i),
            Expr::Bin(_, a, b) => a.depends_on(i) || b.depends_on(i),
        }
    }

    /// Symbolic derivative with respect to `u_i`.
    ///
    /// Results are tidied only by constant folding and 0/1 absorption.
    /// `abs` differentiates to `sign`, so `abs'(0)` is taken as 0.
    pub fn partial(&self, i: usize) -> Expr {
        if !self.depends_on(i) {
            return Expr::Num(0.0);
        }
        match self {
            Expr::Num(_) | Expr::Time => Expr::Num(0.0),
            Expr::Var(_) => Expr::Num(1.0),
            Expr::Neg(a) => neg(a.partial(i)),
            Expr::Bin(op, a, b) => {
                let (da, db) = (a.partial(i), b.partial(i));
                let (a, b) = (a.as_ref().clone(), b.as_ref().clone());
                match op {
                    BinOp::Add => add(da, db),
                    BinOp::Sub => sub(da, db),
                    BinOp::Mul => add(mul(da, b.clone()), mul(a, db)),
                    BinOp::Div => div(
                        sub(mul(da, b.clone()), mul(a, db)),
                        power(b, Expr::Num(2.0)),
                    ),
                    BinOp::Pow if !b.depends_on(i) => {
                        let lowered = match &b {
                            Expr::Num(c) => Expr::Num(c - 1.0),
                            _ => sub(b.clone(), Expr::Num(1.0)),
                        };
                        mul(mul(b, power(a, lowered)), da)
                    }
                    BinOp::Pow => {
                        // d(a^b) = a^b (b' log a + b a' / a)
                        let whole = power(a.clone(), b.clone());
                        let inner = add(
                            mul(db, call(Func::Log, a.clone())),
                            div(mul(b, da), a),
                        );
                        mul(whole, inner)
                    }
                }
            }
            Expr::Call(f, a) => {
                let da = a.partial(i);
                let a = a.as_ref().clone();
                match f {
                    Func::Sin => mul(da, call(Func::Cos, a)),
                    Func::Cos => neg(mul(da, call(Func::Sin, a))),
                    Func::Exp => mul(da, call(Func::Exp, a)),
                    Func::Log => div(da, a),
                    Func::Sqrt => div(da, mul(Expr::Num(2.0), call(Func::Sqrt, a))),
                    Func::Abs => mul(da, call(Func::Sign, a)),
                    Func::Sign => Expr::Num(0.0),
                }
            }
        }
    }
}

// Smart constructors: constant folding and 0/1 absorption only.

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == v)
}

fn fold(v: f64, otherwise: impl FnOnce() -> Expr) -> Expr {
    if v.is_finite() {
        Expr::Num(v)
    } else {
        otherwise()
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ if is_num(&a, 0.0) => b,
        _ if is_num(&b, 0.0) => a,
        _ => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ if is_num(&b, 0.0) => a,
        _ if is_num(&a, 0.0) => neg(b),
        _ => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        _ if is_num(&a, 0.0) || is_num(&b, 0.0) => Expr::Num(0.0),
        _ if is_num(&a, 1.0) => b,
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) if *y != 0.0 => Expr::Num(x / y),
        _ if is_num(&b, 1.0) => a,
        _ if is_num(&a, 0.0) => Expr::Num(0.0),
        _ => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

fn power(a: Expr, b: Expr) -> Expr {
    if is_num(&b, 0.0) {
        return Expr::Num(1.0);
    }
    if is_num(&b, 1.0) {
        return a;
    }
    if let (Expr::Num(x), Expr::Num(y)) = (&a, &b) {
        if let Ok(v) = pow(*x, *y) {
            let (a, b) = (a.clone(), b.clone());
            return fold(v, || Expr::Bin(BinOp::Pow, Box::new(a), Box::new(b)));
        }
    }
    Expr::Bin(BinOp::Pow, Box::new(a), Box::new(b))
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

// ---------------------------------------------------------------------------
// printing

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Num(v) if *v < 0.0 => 3,
        Expr::Bin(BinOp::Pow, ..) => 4,
        _ => 5,
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e15).contains(&a) {
        write!(f, "{v}")
    } else {
        write!(f, "{v:e}")
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, wrap: bool) -> fmt::Result {
    if wrap {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write_num(f, *v),
            Expr::Time => write!(f, "t"),
            Expr::Var(i) => write!(f, "u{i}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                write_wrapped(f, a, precedence(a) < 3)
            }
            Expr::Bin(BinOp::Pow, a, b) => {
                write_wrapped(f, a, precedence(a) <= 4)?;
                write!(f, "^")?;
                write_wrapped(f, b, precedence(b) < 3)
            }
            Expr::Bin(op, a, b) => {
                let p = precedence(self);
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => unreachable!(),
                };
                write_wrapped(f, a, precedence(a) < p)?;
                write!(f, " {sym} ")?;
                write_wrapped(f, b, precedence(b) <= p)
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// Lagrangians

type OpaqueFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
enum Backing {
    Symbolic { expr: Expr, partials: Vec<Expr> },
    Opaque(Arc<OpaqueFn>),
}

/// `L(t, u0, ..., ur)` together with its partial derivatives `L_{u_i}`.
#[derive(Clone)]
pub struct Lagrangian {
    order: usize,
    backing: Backing,
}

impl fmt::Debug for Lagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.backing {
            Backing::Symbolic { expr, .. } => write!(f, "Lagrangian(r={}, {expr})", self.order),
            Backing::Opaque(_) => write!(f, "Lagrangian(r={}, <opaque>)", self.order),
        }
    }
}

impl Lagrangian {
    pub fn parse(source: &str, r: usize) -> Result<Self> {
        Self::from_expr(parse(source, r)?, r)
    }

    pub fn from_expr(expr: Expr, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::BadParam("order r must be at least 1".into()));
        }
        if let Some(i) = expr.max_var().filter(|&i| i > r) {
            return Err(Error::UnknownIdentifier {
                name: format!("u{i}"),
                offset: 0,
            });
        }
        let partials = (0..=r).map(|i| expr.partial(i)).collect();
        Ok(Self {
            order: r,
            backing: Backing::Symbolic { expr, partials },
        })
    }

    /// Wraps an opaque evaluator; partials fall back to central differences.
    pub fn from_fn(r: usize, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            order: r,
            backing: Backing::Opaque(Arc::new(f)),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn expr(&self) -> Option<&Expr> {
        match &self.backing {
            Backing::Symbolic { expr, .. } => Some(expr),
            Backing::Opaque(_) => None,
        }
    }

    pub fn partial_expr(&self, i: usize) -> Option<&Expr> {
        match &self.backing {
            Backing::Symbolic { partials, .. } => partials.get(i),
            Backing::Opaque(_) => None,
        }
    }

    fn check_arity(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.order + 1 {
            return Err(Error::Eval(format!(
                "expected {} arguments u0..u{}, got {}",
                self.order + 1,
                self.order,
                u.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, t: f64, u: &[f64]) -> Result<f64> {
        self.check_arity(u)?;
        match &self.backing {
            Backing::Symbolic { expr, .. } => expr.eval(t, u),
            Backing::Opaque(f) => finite(f(t, u)),
        }
    }

    /// `L_{u_i}(t, u)`.
    pub fn partial(&self, i: usize, t: f64, u: &[f64]) -> Result<f64> {
        self.check_arity(u)?;
        if i > self.order {
            return Err(Error::Eval(format!("no argument u{i} for order {}", self.order)));
        }
        match &self.backing {
            Backing::Symbolic { partials, .. } => partials[i].eval(t, u),
            Backing::Opaque(f) => central_difference(|x| f(t, x), u, i),
        }
    }

    pub fn partials(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        (0..=self.order).map(|i| self.partial(i, t, u)).collect()
    }

    /// The Lagrangian of the maximisation problem, `-L`.
    pub fn negated(&self) -> Self {
        let backing = match &self.backing {
            Backing::Symbolic { expr, partials } => Backing::Symbolic {
                expr: neg(expr.clone()),
                partials: partials.iter().cloned().map(neg).collect(),
            },
            Backing::Opaque(f) => {
                let f = f.clone();
                Backing::Opaque(Arc::new(move |t, u| -f(t, u)))
            }
        };
        Self {
            order: self.order,
            backing,
        }
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Eval(format!("non-finite Lagrangian value {v}")))
    }
}

/// Central difference in `u_i` with step `cbrt(eps) * max(1, |u_i|)`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, u: &[f64], i: usize) -> Result<f64> {
    let h = f64::EPSILON.cbrt() * u[i].abs().max(1.0);
    let mut x = u.to_vec();
    x[i] = u[i] + h;
    let up = finite(f(&x))?;
    x[i] = u[i] - h;
    let down = finite(f(&x))?;
    Ok((up - down) / (2.0 * h))
}
