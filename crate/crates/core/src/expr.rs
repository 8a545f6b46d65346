//! Smooth expression language: parsing, printing, evaluation and symbolic calculus.
//!
//! Variables are `y1..yn` (chart coordinates), `w1..wk` (perturbation parameters) and
//! `t` (the perturbation size). Operators are `+ - * /`, `^` with a constant exponent,
//! and the smooth primitives `sin`, `cos`, `exp`, `step`. `step(u)` is the standard
//! smooth transition, 0 for u <= 0 and 1 for u >= 1; `stepK(u)` is its K-th derivative.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Y(usize),
    W(usize),
    T,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    /// K-th derivative of the smooth step.
    Step(u8, Box<Expr>),
}

/// Values bound to the variables during evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Env<'a> {
    pub y: &'a [f64],
    pub w: &'a [f64],
    pub t: f64,
}

impl<'a> Env<'a> {
    pub fn y(y: &'a [f64]) -> Self {
        Env { y, w: &[], t: 0.0 }
    }
    pub fn new(y: &'a [f64], w: &'a [f64], t: f64) -> Self {
        Env { y, w, t }
    }
}

/// Which variables an expression may mention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarSpace {
    pub ny: usize,
    pub nw: usize,
    pub t: bool,
}

impl VarSpace {
    pub fn y(ny: usize) -> Self {
        VarSpace { ny, nw: 0, t: false }
    }
    pub fn full(ny: usize, nw: usize) -> Self {
        VarSpace { ny, nw, t: true }
    }
    fn admits(&self, v: Var) -> bool {
        match v {
            Var::Y(i) => i < self.ny,
            Var::W(i) => i < self.nw,
            Var::T => self.t,
        }
    }
}

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / u).exp();
        let c = (-1.0 / (1.0 - u)).exp();
        a / (a + c)
    }
}

fn smooth_step_d1(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        let a = (-1.0 / u).exp();
        let c = (-1.0 / (1.0 - u)).exp();
        let s = a + c;
        a * c * (1.0 / (u * u) + 1.0 / ((1.0 - u) * (1.0 - u))) / (s * s)
    }
}

/// K-th derivative of the step; orders above one fall back to central differences
/// and return NaN when two step sizes disagree.
pub fn smooth_step_deriv(k: u8, u: f64) -> f64 {
    match k {
        0 => smooth_step(u),
        1 => smooth_step_d1(u),
        _ => {
            let h = 1e-4;
            let d = |h: f64| (smooth_step_deriv(k - 1, u + h) - smooth_step_deriv(k - 1, u - h)) / (2.0 * h);
            let (d1, d2) = (d(h), d(h / 2.0));
            if !d1.is_finite() || !d2.is_finite() || (d1 - d2).abs() > 1e-3 * (1.0 + d2.abs()) {
                f64::NAN
            } else {
                (4.0 * d2 - d1) / 3.0
            }
        }
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }
    pub fn y(i: usize) -> Expr {
        Expr::Var(Var::Y(i))
    }
    pub fn w(i: usize) -> Expr {
        Expr::Var(Var::W(i))
    }
    pub fn t() -> Expr {
        Expr::Var(Var::T)
    }
    pub fn zero() -> Expr {
        Expr::Num(0.0)
    }
    pub fn one() -> Expr {
        Expr::Num(1.0)
    }
    pub fn add(a: Expr, c: Expr) -> Expr {
        Expr::Add(b(a), b(c))
    }
    pub fn sub(a: Expr, c: Expr) -> Expr {
        Expr::Sub(b(a), b(c))
    }
    pub fn mul(a: Expr, c: Expr) -> Expr {
        Expr::Mul(b(a), b(c))
    }
    pub fn div(a: Expr, c: Expr) -> Expr {
        Expr::Div(b(a), b(c))
    }
    pub fn neg(a: Expr) -> Expr {
        Expr::Neg(b(a))
    }
    pub fn pow(a: Expr, p: f64) -> Expr {
        Expr::Pow(b(a), p)
    }
    pub fn step(a: Expr) -> Expr {
        Expr::Step(0, b(a))
    }

    /// Sum of a list, simplified.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        let mut acc = Expr::zero();
        for t in terms {
            acc = Expr::add(acc, t);
        }
        acc.simplify()
    }

    pub fn parse(src: &str, space: VarSpace) -> Result<Expr> {
        let mut p = Parser { src, pos: 0, space };
        p.skip_ws();
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, env: &Env) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::Y(i)) => env.y.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Var(Var::W(i)) => env.w.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Var(Var::T) => env.t,
            Expr::Neg(a) => -a.eval(env),
            Expr::Add(a, c) => a.eval(env) + c.eval(env),
            Expr::Sub(a, c) => a.eval(env) - c.eval(env),
            Expr::Mul(a, c) => a.eval(env) * c.eval(env),
            Expr::Div(a, c) => a.eval(env) / c.eval(env),
            Expr::Pow(a, p) => powf(a.eval(env), *p),
            Expr::Sin(a) => a.eval(env).sin(),
            Expr::Cos(a) => a.eval(env).cos(),
            Expr::Exp(a) => a.eval(env).exp(),
            Expr::Step(k, a) => smooth_step_deriv(*k, a.eval(env)),
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(u) => *u == v,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) | Expr::Step(_, a) => {
                a.depends_on(v)
            }
            Expr::Add(a, c) | Expr::Sub(a, c) | Expr::Mul(a, c) | Expr::Div(a, c) => a.depends_on(v) || c.depends_on(v),
        }
    }

    /// Largest variable indices mentioned, as a space.
    pub fn space(&self) -> VarSpace {
        let mut s = VarSpace { ny: 0, nw: 0, t: false };
        self.visit_vars(&mut |v| match v {
            Var::Y(i) => s.ny = s.ny.max(i + 1),
            Var::W(i) => s.nw = s.nw.max(i + 1),
            Var::T => s.t = true,
        });
        s
    }

    fn visit_vars(&self, f: &mut dyn FnMut(Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) | Expr::Step(_, a) => {
                a.visit_vars(f)
            }
            Expr::Add(a, c) | Expr::Sub(a, c) | Expr::Mul(a, c) | Expr::Div(a, c) => {
                a.visit_vars(f);
                c.visit_vars(f)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    /// Symbolic partial derivative, simplified.
    pub fn diff(&self, v: Var) -> Expr {
        self.diff_raw(v).simplify()
    }

    fn diff_raw(&self, v: Var) -> Expr {
        if !self.depends_on(v) {
            return Expr::zero();
        }
        match self {
            Expr::Num(_) => Expr::zero(),
            Expr::Var(u) => Expr::Num(if *u == v { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.diff_raw(v)),
            Expr::Add(a, c) => Expr::add(a.diff_raw(v), c.diff_raw(v)),
            Expr::Sub(a, c) => Expr::sub(a.diff_raw(v), c.diff_raw(v)),
            Expr::Mul(a, c) => Expr::add(
                Expr::mul(a.diff_raw(v), (**c).clone()),
                Expr::mul((**a).clone(), c.diff_raw(v)),
            ),
            Expr::Div(a, c) => Expr::div(
                Expr::sub(
                    Expr::mul(a.diff_raw(v), (**c).clone()),
                    Expr::mul((**a).clone(), c.diff_raw(v)),
                ),
                Expr::pow((**c).clone(), 2.0),
            ),
            Expr::Pow(a, p) => Expr::mul(
                Expr::mul(Expr::Num(*p), Expr::pow((**a).clone(), p - 1.0)),
                a.diff_raw(v),
            ),
            Expr::Sin(a) => Expr::mul(Expr::Cos(a.clone()), a.diff_raw(v)),
            Expr::Cos(a) => Expr::neg(Expr::mul(Expr::Sin(a.clone()), a.diff_raw(v))),
            Expr::Exp(a) => Expr::mul(Expr::Exp(a.clone()), a.diff_raw(v)),
            Expr::Step(k, a) => Expr::mul(Expr::Step(k + 1, a.clone()), a.diff_raw(v)),
        }
    }

    /// Replace variables; `f` returns `None` to keep a variable.
    pub fn substitute(&self, f: &dyn Fn(Var) -> Option<Expr>) -> Expr {
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Var(v) => f(*v).unwrap_or_else(|| self.clone()),
            Expr::Neg(a) => Expr::neg(a.substitute(f)),
            Expr::Add(a, c) => Expr::add(a.substitute(f), c.substitute(f)),
            Expr::Sub(a, c) => Expr::sub(a.substitute(f), c.substitute(f)),
            Expr::Mul(a, c) => Expr::mul(a.substitute(f), c.substitute(f)),
            Expr::Div(a, c) => Expr::div(a.substitute(f), c.substitute(f)),
            Expr::Pow(a, p) => Expr::pow(a.substitute(f), *p),
            Expr::Sin(a) => Expr::Sin(b(a.substitute(f))),
            Expr::Cos(a) => Expr::Cos(b(a.substitute(f))),
            Expr::Exp(a) => Expr::Exp(b(a.substitute(f))),
            Expr::Step(k, a) => Expr::Step(*k, b(a.substitute(f))),
        }
    }

    /// Substitute chart coordinates `y_i := ys[i]`.
    pub fn compose_y(&self, ys: &[Expr]) -> Expr {
        self.substitute(&|v| match v {
            Var::Y(i) => ys.get(i).cloned(),
            _ => None,
        })
        .simplify()
    }

    /// Constant folding and identity elimination.
    pub fn simplify(&self) -> Expr {
        use Expr::*;
        match self {
            Num(_) | Var(_) => self.clone(),
            Neg(a) => match a.simplify() {
                Num(v) => Num(-v),
                Neg(x) => *x,
                x => Expr::neg(x),
            },
            Add(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) => Num(x + y),
                (x, y) if x.is_zero() => y,
                (x, y) if y.is_zero() => x,
                (x, Neg(y)) => Expr::sub(x, *y),
                (x, Num(y)) if y < 0.0 => Expr::sub(x, Num(-y)),
                (x, y) => Expr::add(x, y),
            },
            Sub(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) => Num(x - y),
                (x, y) if y.is_zero() => x,
                (x, y) if x.is_zero() => Neg(b(y)).simplify(),
                (x, Neg(y)) => Expr::add(x, *y),
                (x, y) => Expr::sub(x, y),
            },
            Mul(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) => Num(x * y),
                (x, y) if x.is_zero() || y.is_zero() => Num(0.0),
                (Num(x), y) if x == 1.0 => y,
                (x, Num(y)) if y == 1.0 => x,
                (Num(x), y) if x == -1.0 => Expr::neg(y).simplify(),
                (x, Num(y)) if y == -1.0 => Expr::neg(x).simplify(),
                (Num(x), Mul(p, q)) if matches!(*p, Num(_)) => {
                    Expr::mul(Num(x * p.as_const().unwrap()), *q).simplify()
                }
                (x, Num(y)) => Expr::mul(Num(y), x),
                (Neg(x), Neg(y)) => Expr::mul(*x, *y),
                (x, y) => Expr::mul(x, y),
            },
            Div(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) if y != 0.0 => Num(x / y),
                (x, _) if x.is_zero() => Num(0.0),
                (x, Num(y)) if y == 1.0 => x,
                (x, y) => Expr::div(x, y),
            },
            Pow(a, p) => match a.simplify() {
                _ if *p == 0.0 => Num(1.0),
                x if *p == 1.0 => x,
                Num(x) => Num(powf(x, *p)),
                x => Expr::pow(x, *p),
            },
            Sin(a) => match a.simplify() {
                Num(x) => Num(x.sin()),
                x => Sin(b(x)),
            },
            Cos(a) => match a.simplify() {
                Num(x) => Num(x.cos()),
                x => Cos(b(x)),
            },
            Exp(a) => match a.simplify() {
                Num(x) => Num(x.exp()),
                x => Exp(b(x)),
            },
            Step(k, a) => match a.simplify() {
                Num(x) => Num(smooth_step_deriv(*k, x)),
                x => Step(*k, b(x)),
            },
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if v.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, ctx: u8) -> fmt::Result {
        let p = self.prec();
        let paren = p < ctx;
        if paren {
            f.write_str("(")?;
        }
        match self {
            Expr::Num(v) => write!(f, "{v:?}")?,
            Expr::Var(Var::Y(i)) => write!(f, "y{}", i + 1)?,
            Expr::Var(Var::W(i)) => write!(f, "w{}", i + 1)?,
            Expr::Var(Var::T) => f.write_str("t")?,
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.write(f, 3)?;
            }
            Expr::Add(a, c) => {
                a.write(f, 1)?;
                f.write_str(" + ")?;
                c.write(f, 2)?;
            }
            Expr::Sub(a, c) => {
                a.write(f, 1)?;
                f.write_str(" - ")?;
                c.write(f, 2)?;
            }
            Expr::Mul(a, c) => {
                a.write(f, 2)?;
                f.write_str("*")?;
                c.write(f, 3)?;
            }
            Expr::Div(a, c) => {
                a.write(f, 2)?;
                f.write_str("/")?;
                c.write(f, 3)?;
            }
            Expr::Pow(a, e) => {
                a.write(f, 5)?;
                if e.is_sign_negative() {
                    write!(f, "^({e:?})")?;
                } else {
                    write!(f, "^{e:?}")?;
                }
            }
            Expr::Sin(a) => write!(f, "sin({a})")?,
            Expr::Cos(a) => write!(f, "cos({a})")?,
            Expr::Exp(a) => write!(f, "exp({a})")?,
            Expr::Step(0, a) => write!(f, "step({a})")?,
            Expr::Step(k, a) => write!(f, "step{k}({a})")?,
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

fn powf(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, 0)
    }
}

struct Parser<'s> {
    src: &'s str,
    pos: usize,
    space: VarSpace,
}

impl<'s> Parser<'s> {
    fn err(&self, msg: &str) -> Error {
        let before = &self.src[..self.pos.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Error::Parse { line, col, msg: msg.to_string() }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::add(lhs, self.term()?);
            } else if self.eat('-') {
                lhs = Expr::sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::mul(lhs, self.unary()?);
            } else if self.eat('/') {
                lhs = Expr::div(lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Num(v) => Expr::Num(-v),
                other => Expr::neg(other),
            });
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let at = self.pos;
            let exp = self.unary()?.simplify();
            match exp {
                Expr::Num(p) => Ok(Expr::pow(base, p)),
                _ => {
                    self.pos = at;
                    Err(Error::Type("exponent must be a constant".into()))
                }
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        self.skip_ws();
        let c = self.peek().ok_or_else(|| self.err("unexpected end of expression"))?;
        if c == '(' {
            self.pos += 1;
            let e = self.expr()?;
            if !self.eat(')') {
                return Err(self.err("expected ')'"));
            }
            return Ok(e);
        }
        if c.is_ascii_digit() || c == '.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() {
            let start = self.pos;
            while let Some(c) = self.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            let ident = &self.src[start..self.pos];
            return self.ident(ident, start);
        }
        Err(self.err(&format!("unexpected character '{c}'")))
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| self.err("malformed number"))
    }

    fn ident(&mut self, ident: &str, start: usize) -> Result<Expr> {
        if ident == "pi" {
            return Ok(Expr::Num(std::f64::consts::PI));
        }
        if ident == "t" {
            return self.var(Var::T, start);
        }
        let (head, digits) = ident.split_at(ident.find(|c: char| c.is_ascii_digit()).unwrap_or(ident.len()));
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
            let k: usize = digits.parse().map_err(|_| self.err("index too large"))?;
            match head {
                "y" | "w" if k == 0 => {
                    return Err(Error::Type(format!("variable {ident}: indices start at 1")));
                }
                "y" => return self.var(Var::Y(k - 1), start),
                "w" => return self.var(Var::W(k - 1), start),
                "step" if k < 8 => {
                    let arg = self.call_arg(ident)?;
                    return Ok(Expr::Step(k as u8, b(arg)));
                }
                _ => {}
            }
        }
        let arg = |p: &mut Self| p.call_arg(ident);
        match ident {
            "sin" => Ok(Expr::Sin(b(arg(self)?))),
            "cos" => Ok(Expr::Cos(b(arg(self)?))),
            "exp" => Ok(Expr::Exp(b(arg(self)?))),
            "step" => Ok(Expr::Step(0, b(arg(self)?))),
            _ => {
                self.skip_ws();
                if self.peek() == Some('(') {
                    Err(Error::Type(format!("function {ident} is not part of the smooth language")))
                } else {
                    Err(Error::Type(format!("unknown variable {ident}")))
                }
            }
        }
    }

    fn call_arg(&mut self, name: &str) -> Result<Expr> {
        if !self.eat('(') {
            return Err(self.err(&format!("expected '(' after {name}")));
        }
        let e = self.expr()?;
        if !self.eat(')') {
            return Err(self.err("expected ')'"));
        }
        Ok(e)
    }

    fn var(&self, v: Var, _start: usize) -> Result<Expr> {
        if self.space.admits(v) {
            Ok(Expr::Var(v))
        } else {
            Err(Error::Type(format!("variable {} is not available here", Expr::Var(v))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        Expr::parse(s, VarSpace::full(3, 3)).unwrap()
    }

    #[test]
    fn precedence() {
        let e = p("1 + 2*3^2 - -4");
        assert_eq!(e.eval(&Env::y(&[])), 23.0);
        assert_eq!(p("-2^2").eval(&Env::y(&[])), -4.0);
        assert_eq!(p("2^-1").eval(&Env::y(&[])), 0.5);
    }

    #[test]
    fn derivative_of_square() {
        let d = p("y1^2").diff(Var::Y(0));
        assert_eq!(d.to_string(), "2.0*y1");
    }

    #[test]
    fn abs_is_rejected() {
        let err = Expr::parse("abs(y1)", VarSpace::y(1)).unwrap_err();
        assert_eq!(err.code(), "TYPE_ERROR");
        assert_eq!(Expr::parse("y2", VarSpace::y(1)).unwrap_err().code(), "TYPE_ERROR");
        assert_eq!(Expr::parse("y1 +", VarSpace::y(1)).unwrap_err().code(), "PARSE_ERROR");
    }

    #[test]
    fn step_is_smooth_transition() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        let e = p("step(y1)");
        let d = e.diff(Var::Y(0));
        let y = 0.3;
        let fd = (smooth_step(y + 1e-6) - smooth_step(y - 1e-6)) / 2e-6;
        assert!((d.eval(&Env::y(&[y])) - fd).abs() < 1e-8);
        let d2 = d.diff(Var::Y(0)).eval(&Env::y(&[y]));
        let fd2 = (smooth_step_d1(y + 1e-5) - smooth_step_d1(y - 1e-5)) / 2e-5;
        assert!((d2 - fd2).abs() < 1e-5);
    }

    #[test]
    fn display_round_trip() {
        for s in ["y1 - (y2 - y3)", "-(y1 + 2.0)*w1", "(-3.0)^2", "y1/(y2*y3)", "sin(y1)^(-1.0)", "step1(t*y1)", "-y1^2"] {
            let e = p(s);
            assert_eq!(p(&e.to_string()), e, "{s} -> {e}");
        }
    }
}
