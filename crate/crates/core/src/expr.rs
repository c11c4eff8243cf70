//! A tiny arithmetic language for problem files.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := power (('*' | '/') power)*
//! power  := unary ('^' power)?          -- right associative
//! unary  := '-' unary | atom
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! number := digits ['.' digits] [('e'|'E') ['+'|'-'] digits]
//! ```
//!
//! Unary minus binds tighter than `^`, so `-2^2` is `4`. Functions: `sin`,
//! `cos`, `exp`, `log`, `sqrt`, `abs` (one argument) and `pow`, `min`, `max`
//! (two). A vector expression is a comma-separated list of components.
//! There are no comparison or conditional operators; branches must be built
//! from `min`, `max` and `abs`.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown function `{name}` at {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("`{name}` at {pos} takes {expected} argument(s), got {got}")]
    Arity {
        name: String,
        pos: usize,
        expected: usize,
        got: usize,
    },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("evaluation produced a non-finite value ({0})")]
    NonFinite(f64),
    #[error("{source} at sample point {point:?}")]
    AtPoint {
        source: Box<ExprError>,
        point: Vec<(String, f64)>,
    },
    #[error("invalid sampling request: {0}")]
    Sampling(String),
}

pub type Result<T> = std::result::Result<T, ExprError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Pow,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 9] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Pow,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }

    fn apply(self, a: f64, b: f64) -> Result<f64> {
        Ok(match self {
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Exp => a.exp(),
            Func::Log => {
                if a <= 0.0 {
                    return Err(ExprError::Domain(format!("log({a})")));
                }
                a.ln()
            }
            Func::Sqrt => {
                if a < 0.0 {
                    return Err(ExprError::Domain(format!("sqrt({a})")));
                }
                a.sqrt()
            }
            Func::Abs => a.abs(),
            Func::Pow => a.powf(b),
            Func::Min => a.min(b),
            Func::Max => a.max(b),
        })
    }
}

/// Expression tree. Literals produced by the parser are always finite and
/// nonnegative; negation is an explicit node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Fully parenthesized canonical form; re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
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
            let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("malformed number `{text}`"),
            })?;
            if !v.is_finite() {
                return Err(ExprError::Syntax {
                    pos: start,
                    msg: format!("number `{text}` is out of range"),
                });
            }
            out.push((Tok::Num(v), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => {
                return Err(ExprError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        };
        out.push((tok, start));
        i += c.len_utf8();
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(ExprError::Syntax {
            pos: self.here(),
            msg: msg.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.power()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.power()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.power()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.here();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() != Some(&Tok::LParen) {
                    return Ok(Expr::Var(name));
                }
                let func = Func::lookup(&name).ok_or(ExprError::UnknownFunction { name: name.clone(), pos: at })?;
                self.pos += 1;
                let mut args = vec![self.expr()?];
                while self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)` closing the argument list");
                }
                self.pos += 1;
                if args.len() != func.arity() {
                    return Err(ExprError::Arity {
                        name,
                        pos: at,
                        expected: func.arity(),
                        got: args.len(),
                    });
                }
                Ok(Expr::Call(func, args))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(t) => self.err(format!("unexpected token {t:?}")),
            None => self.err("unexpected end of input"),
        }
    }
}

/// Parses a single scalar expression.
pub fn parse(text: &str) -> Result<Expr> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

/// Parses a comma-separated list of component expressions.
pub fn parse_vector(text: &str) -> Result<Vec<Expr>> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let mut out = vec![p.expr()?];
    while p.peek() == Some(&Tok::Comma) {
        p.pos += 1;
        out.push(p.expr()?);
    }
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(out)
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(ExprError::NonFinite(x))
    }
}

impl Expr {
    pub fn eval(&self, env: &HashMap<String, f64>) -> Result<f64> {
        let v = match self {
            Expr::Num(x) => *x,
            Expr::Var(name) => *env.get(name).ok_or_else(|| ExprError::Unbound(name.clone()))?,
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Bin(op, l, r) => {
                let (a, b) = (l.eval(env)?, r.eval(env)?);
                bin(*op, a, b)?
            }
            Expr::Call(func, args) => {
                let a = args[0].eval(env)?;
                let b = if args.len() > 1 { args[1].eval(env)? } else { 0.0 };
                func.apply(a, b)?
            }
        };
        finite(v)
    }

    /// Names of all variables referenced, in first-appearance order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Bin(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    pub fn mentions(&self, var: &str) -> bool {
        self.variables().iter().any(|v| v == var)
    }

    /// Structurally affine in the variables selected by `is_state`: built
    /// from them with `+`, `-`, and products or quotients by state-free
    /// factors. Conservative: `u1*u1/u1` is reported non-affine.
    pub fn is_affine_in(&self, is_state: &dyn Fn(&str) -> bool) -> bool {
        let free = |e: &Expr| e.variables().iter().all(|v| !is_state(v));
        match self {
            Expr::Num(_) | Expr::Var(_) => true,
            Expr::Neg(e) => e.is_affine_in(is_state),
            Expr::Bin(BinOp::Add | BinOp::Sub, l, r) => l.is_affine_in(is_state) && r.is_affine_in(is_state),
            Expr::Bin(BinOp::Mul, l, r) => {
                (free(l) && r.is_affine_in(is_state)) || (free(r) && l.is_affine_in(is_state))
            }
            Expr::Bin(BinOp::Div, l, r) => free(r) && l.is_affine_in(is_state),
            Expr::Bin(BinOp::Pow, ..) | Expr::Call(..) => free(self),
        }
    }
}

fn bin(op: BinOp, a: f64, b: f64) -> Result<f64> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(ExprError::Domain(format!("division of {a} by zero")));
            }
            a / b
        }
        BinOp::Pow => a.powf(b),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Load(usize),
    Neg,
    Bin(BinOp),
    Call(Func),
}

/// Postfix program with variables resolved to slots; evaluation allocates
/// only the small stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    code: Vec<Op>,
    depth: usize,
}

impl Compiled {
    pub fn new(e: &Expr, slots: &[&str]) -> Result<Self> {
        let mut code = Vec::new();
        emit(e, slots, &mut code)?;
        let mut depth = 0usize;
        let mut max = 0usize;
        for op in &code {
            match op {
                Op::Const(_) | Op::Load(_) => depth += 1,
                Op::Bin(_) => depth -= 1,
                Op::Call(f) => depth -= f.arity() - 1,
                Op::Neg => {}
            }
            max = max.max(depth);
        }
        Ok(Self { code, depth: max })
    }

    pub fn eval(&self, slots: &[f64]) -> Result<f64> {
        let mut stack: Vec<f64> = Vec::with_capacity(self.depth);
        for op in &self.code {
            match *op {
                Op::Const(x) => stack.push(x),
                Op::Load(i) => stack.push(slots[i]),
                Op::Neg => {
                    let a = stack.pop().unwrap();
                    stack.push(-a);
                }
                Op::Bin(b) => {
                    let r = stack.pop().unwrap();
                    let l = stack.pop().unwrap();
                    stack.push(finite(bin(b, l, r)?)?);
                }
                Op::Call(f) => {
                    let (a, b) = if f.arity() == 2 {
                        let b = stack.pop().unwrap();
                        (stack.pop().unwrap(), b)
                    } else {
                        (stack.pop().unwrap(), 0.0)
                    };
                    stack.push(finite(f.apply(a, b)?)?);
                }
            }
        }
        finite(stack.pop().unwrap())
    }
}

fn emit(e: &Expr, slots: &[&str], code: &mut Vec<Op>) -> Result<()> {
    match e {
        Expr::Num(x) => code.push(Op::Const(*x)),
        Expr::Var(name) => {
            let i = slots
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| ExprError::Unbound(name.clone()))?;
            code.push(Op::Load(i));
        }
        Expr::Neg(inner) => {
            emit(inner, slots, code)?;
            code.push(Op::Neg);
        }
        Expr::Bin(op, l, r) => {
            emit(l, slots, code)?;
            emit(r, slots, code)?;
            code.push(Op::Bin(*op));
        }
        Expr::Call(f, args) => {
            for a in args {
                emit(a, slots, code)?;
            }
            code.push(Op::Call(*f));
        }
    }
    Ok(())
}

/// Variable names for a state function of dimension `d`: `t, u1, ..., ud`.
pub fn state_slots(d: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=d).map(|i| format!("u{i}")))
        .collect()
}

/// A vector field `(t, u) ↦ R^d`, compiled against the slots `t, u1..ud`.
#[derive(Debug, Clone)]
pub struct StateFn {
    pub exprs: Vec<Expr>,
    compiled: Vec<Compiled>,
    dim: usize,
}

impl StateFn {
    pub fn new(exprs: Vec<Expr>, dim: usize) -> Result<Self> {
        if exprs.len() != dim {
            return Err(ExprError::Syntax {
                pos: 0,
                msg: format!("expected {dim} component(s), got {}", exprs.len()),
            });
        }
        let names = state_slots(dim);
        let slots: Vec<&str> = names.iter().map(String::as_str).collect();
        let compiled = exprs.iter().map(|e| Compiled::new(e, &slots)).collect::<Result<_>>()?;
        Ok(Self { exprs, compiled, dim })
    }

    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        Self::new(parse_vector(text)?, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
        let mut slots = Vec::with_capacity(self.dim + 1);
        slots.push(t);
        slots.extend(u.iter().copied());
        let mut out = DVector::zeros(self.dim);
        for (i, c) in self.compiled.iter().enumerate() {
            out[i] = c.eval(&slots)?;
        }
        Ok(out)
    }

    /// True when every component is affine in `u` (see [`Expr::is_affine_in`]).
    pub fn is_affine_in_state(&self) -> bool {
        let is_state = |v: &str| v != "t";
        self.exprs.iter().all(|e| e.is_affine_in(&is_state))
    }

    /// True when no component references any `u` variable.
    pub fn is_state_independent(&self) -> bool {
        self.exprs.iter().all(|e| e.variables().iter().all(|v| v == "t"))
    }
}

/// Box constraint for one variable during sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct VarRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl VarRange {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
        }
    }
}

/// Latin-hypercube sample: `samples` points, one per stratum in every
/// coordinate, strata paired by independent random permutations.
pub fn latin_hypercube(bx: &[VarRange], samples: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; bx.len()]; samples];
    for (k, r) in bx.iter().enumerate() {
        let mut perm: Vec<usize> = (0..samples).collect();
        perm.shuffle(rng);
        for (i, p) in perm.into_iter().enumerate() {
            let u: f64 = rng.gen();
            pts[i][k] = r.lo + (r.hi - r.lo) * (p as f64 + u) / samples as f64;
        }
    }
    pts
}

/// Sampled lower bound on the Lipschitz constant of `e` in `var` over the
/// box, uniformly in the other variables.
///
/// Two pair families are used, both varying `var` alone: each sample point
/// against the same point with `var` taken from the next sample, and each
/// sample point against the point whose `var` lies in the adjacent stratum.
/// The second family resolves local slopes at the stratum scale. The result
/// is the largest observed difference quotient, a lower bound on the true
/// constant.
pub fn lipschitz_estimate(e: &Expr, var: &str, bx: &[VarRange], samples: usize, seed: u64) -> Result<f64> {
    if samples < 2 {
        return Err(ExprError::Sampling(format!("need at least 2 samples, got {samples}")));
    }
    if bx.iter().any(|r| !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi)) {
        return Err(ExprError::Sampling("box bounds must be finite with lo <= hi".into()));
    }
    let k = bx
        .iter()
        .position(|r| r.name == var)
        .ok_or_else(|| ExprError::Sampling(format!("variable `{var}` is not in the box")))?;
    let names: Vec<&str> = bx.iter().map(|r| r.name.as_str()).collect();
    let prog = Compiled::new(e, &names)?;
    let eval = |x: &[f64]| {
        prog.eval(x).map_err(|err| ExprError::AtPoint {
            source: Box::new(err),
            point: names.iter().map(|n| n.to_string()).zip(x.iter().copied()).collect(),
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = latin_hypercube(bx, samples, &mut rng);

    let mut order: Vec<usize> = (0..samples).collect();
    order.sort_by(|&a, &b| pts[a][k].total_cmp(&pts[b][k]));
    let mut rank = vec![0usize; samples];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let mut best = 0.0_f64;
    let mut quotient = |x: &[f64], v: f64| -> Result<()> {
        let dv = v - x[k];
        if dv == 0.0 {
            return Ok(());
        }
        let mut y = x.to_vec();
        y[k] = v;
        let q = ((eval(&y)? - eval(x)?) / dv).abs();
        best = best.max(q);
        Ok(())
    };
    for i in 0..samples {
        let x = &pts[i];
        quotient(x, pts[(i + 1) % samples][k])?;
        if rank[i] + 1 < samples {
            quotient(x, pts[order[rank[i] + 1]][k])?;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn affinity_in_state() {
        let affine = |t: &str| StateFn::parse(t, 2).unwrap().is_affine_in_state();
        assert!(affine("-u1 + sin(t)*u2, (u1 - 2*u2)/exp(t)"));
        assert!(affine("sin(t), 3"));
        assert!(!affine("sin(u1), u2"));
        assert!(!affine("u1*u2, 0"));
        assert!(!affine("u1^2, 0"));
        assert!(!affine("1/u1, 0"));
    }

    #[test]
    fn examples() {
        let e = parse("-(2*u1) + sin(t)").unwrap();
        assert_eq!(e.eval(&env(&[("t", 0.0), ("u1", 1.0)])).unwrap(), -2.0);
        assert_eq!(parse("2+3*4").unwrap().eval(&env(&[])).unwrap(), 14.0);
        assert_eq!(parse("pow(2, pow(1,3))").unwrap().eval(&env(&[])).unwrap(), 2.0);
        assert_eq!(parse("7").unwrap().eval(&env(&[])).unwrap(), 7.0);
        assert_eq!(parse("u1*u2").unwrap().eval(&env(&[("u1", 3.0), ("u2", 4.0)])).unwrap(), 12.0);
        assert!(matches!(
            parse("log(t)").unwrap().eval(&env(&[("t", 0.0)])),
            Err(ExprError::Domain(_))
        ));
    }

    #[test]
    fn precedence_and_associativity() {
        let v = |s: &str| parse(s).unwrap().eval(&env(&[])).unwrap();
        assert_eq!(v("2^3^2"), 512.0);
        assert_eq!(v("-2^2"), 4.0);
        assert_eq!(v("8/4/2"), 1.0);
        assert_eq!(v("10-3-2"), 5.0);
        assert_eq!(v("2*3^2"), 18.0);
        assert_eq!(v("1.5e1 + 2E-1"), 15.2);
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(
            parse("1 + foo(2)"),
            Err(ExprError::UnknownFunction {
                name: "foo".into(),
                pos: 4
            })
        );
        assert!(matches!(parse("min(1)"), Err(ExprError::Arity { expected: 2, got: 1, .. })));
        assert!(matches!(parse("1 +"), Err(ExprError::Syntax { pos: 3, .. })));
        assert!(matches!(parse("(1"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("1 $ 2"), Err(ExprError::Syntax { pos: 2, .. })));
        assert!(matches!(parse("1 2"), Err(ExprError::Syntax { pos: 2, .. })));
    }

    #[test]
    fn unbound_and_nonfinite() {
        assert_eq!(parse("x").unwrap().eval(&env(&[])), Err(ExprError::Unbound("x".into())));
        assert!(matches!(parse("exp(1000)").unwrap().eval(&env(&[])), Err(ExprError::NonFinite(_))));
        assert!(parse("1/0").unwrap().eval(&env(&[])).is_err());
        assert!(parse("sqrt(-1)").unwrap().eval(&env(&[])).is_err());
    }

    #[test]
    fn compiled_matches_tree() {
        let e = parse("max(u1, -t) * exp(-u2) + pow(abs(u1), 1.5) - cos(t)/3").unwrap();
        let c = Compiled::new(&e, &["t", "u1", "u2"]).unwrap();
        for &(t, a, b) in &[(0.1, 0.5, -1.0), (2.0, -3.0, 0.25)] {
            let tree = e.eval(&env(&[("t", t), ("u1", a), ("u2", b)])).unwrap();
            assert_eq!(c.eval(&[t, a, b]).unwrap().to_bits(), tree.to_bits());
        }
        assert!(Compiled::new(&e, &["t", "u1"]).is_err());
    }

    #[test]
    fn vector_parsing() {
        let f = StateFn::parse("-u1 + u2, min(u1, u2)", 2).unwrap();
        let v = f.eval(0.0, &DVector::from_vec(vec![1.0, 3.0])).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 1.0]);
        assert!(StateFn::parse("u1", 2).is_err());
        assert!(StateFn::parse("sin(t)", 1).unwrap().is_state_independent());
    }

    #[test]
    fn lipschitz_examples() {
        let bx = [VarRange::new("u1", 0.0, 1.0)];
        let l = lipschitz_estimate(&parse("3*u1").unwrap(), "u1", &bx, 100, 7).unwrap();
        assert!((l - 3.0).abs() < 1e-9);
        assert_eq!(lipschitz_estimate(&parse("5").unwrap(), "u1", &bx, 100, 7).unwrap(), 0.0);
        let bx2 = [VarRange::new("u1", 0.0, 2.0)];
        let l2 = lipschitz_estimate(&parse("u1*u1").unwrap(), "u1", &bx2, 10_000, 7).unwrap();
        // Dense scan oracle: sup |2u| on [0,2] is 4.
        let scan = (0..20_000)
            .map(|i| 2.0 * (2.0 * i as f64 / 20_000.0))
            .fold(0.0, f64::max);
        assert!(l2 >= 3.99 && l2 <= scan + 1e-9);
    }

    #[test]
    fn lipschitz_reports_failing_point() {
        let bx = [VarRange::new("u1", -1.0, 1.0)];
        let err = lipschitz_estimate(&parse("log(u1)").unwrap(), "u1", &bx, 10, 1).unwrap_err();
        assert!(matches!(err, ExprError::AtPoint { .. }));
        assert!(lipschitz_estimate(&parse("u1").unwrap(), "u1", &bx, 1, 1).is_err());
    }
}
