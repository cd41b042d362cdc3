//! Running-payoff expressions with a provable sup-norm bound.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary ('*' unary)*
//! unary := '-' unary | atom
//! atom  := number | 'x' digits | 'x[' digits ']' | '(' expr ')'
//!        | 'min' '(' expr (',' expr)+ ')'
//!        | 'max' '(' expr (',' expr)+ ')'
//!        | 'clamp' '(' expr ',' expr ',' expr ')'
//!        | 'step' '(' expr ',' expr ')'          -- 1 if arg ≥ threshold else 0
//! ```
//!
//! Coordinates are unbounded, so an expression is accepted only if interval
//! arithmetic proves it stays inside `[-bound, bound]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Coord(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Min(Vec<Expr>),
    Max(Vec<Expr>),
    Clamp(Box<Expr>, Box<Expr>, Box<Expr>),
    Step(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Coord(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Min(v) => v.iter().map(|e| e.eval(x)).fold(f64::INFINITY, f64::min),
            Expr::Max(v) => v.iter().map(|e| e.eval(x)).fold(f64::NEG_INFINITY, f64::max),
            // max/min rather than f64::clamp: NaN collapses onto the bounds.
            Expr::Clamp(a, lo, hi) => a.eval(x).max(lo.eval(x)).min(hi.eval(x)),
            Expr::Step(a, t) => {
                if a.eval(x) >= t.eval(x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Guaranteed range over every finite input.
    pub fn interval(&self) -> (f64, f64) {
        match self {
            Expr::Const(c) => (*c, *c),
            Expr::Coord(_) => (f64::NEG_INFINITY, f64::INFINITY),
            Expr::Neg(a) => {
                let (lo, hi) = a.interval();
                (-hi, -lo)
            }
            Expr::Add(a, b) => {
                let (al, ah) = a.interval();
                let (bl, bh) = b.interval();
                (sane_lo(al + bl), sane_hi(ah + bh))
            }
            Expr::Sub(a, b) => {
                let (al, ah) = a.interval();
                let (bl, bh) = b.interval();
                (sane_lo(al - bh), sane_hi(ah - bl))
            }
            Expr::Mul(a, b) => {
                let (al, ah) = a.interval();
                let (bl, bh) = b.interval();
                let products = [al * bl, al * bh, ah * bl, ah * bh];
                if products.iter().any(|p| p.is_nan()) {
                    return (f64::NEG_INFINITY, f64::INFINITY);
                }
                let lo = products.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = products.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            Expr::Min(v) => {
                let iv: Vec<_> = v.iter().map(Expr::interval).collect();
                (
                    iv.iter().map(|i| i.0).fold(f64::INFINITY, f64::min),
                    iv.iter().map(|i| i.1).fold(f64::INFINITY, f64::min),
                )
            }
            Expr::Max(v) => {
                let iv: Vec<_> = v.iter().map(Expr::interval).collect();
                (
                    iv.iter().map(|i| i.0).fold(f64::NEG_INFINITY, f64::max),
                    iv.iter().map(|i| i.1).fold(f64::NEG_INFINITY, f64::max),
                )
            }
            Expr::Clamp(_, lo, hi) => {
                let (ll, _) = lo.interval();
                let (_, hh) = hi.interval();
                (ll, hh)
            }
            Expr::Step(..) => (0.0, 1.0),
        }
    }

    pub fn max_coord(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Coord(i) => Some(*i),
            Expr::Neg(a) => a.max_coord(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Step(a, b) => a.max_coord().max(b.max_coord()),
            Expr::Min(v) | Expr::Max(v) => v.iter().filter_map(Expr::max_coord).max(),
            Expr::Clamp(a, b, c) => a.max_coord().max(b.max_coord()).max(c.max_coord()),
        }
    }
}

fn sane_lo(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn sane_hi(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list(f: &mut fmt::Formatter<'_>, name: &str, v: &[Expr]) -> fmt::Result {
            write!(f, "{name}(")?;
            for (i, e) in v.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{e}")?;
            }
            write!(f, ")")
        }
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Coord(i) => write!(f, "x{i}"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Min(v) => list(f, "min", v),
            Expr::Max(v) => list(f, "max", v),
            Expr::Clamp(a, lo, hi) => write!(f, "clamp({a}, {lo}, {hi})"),
            Expr::Step(a, t) => write!(f, "step({a}, {t})"),
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

pub fn parse_expr(src: &str) -> Result<Expr> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Parse(format!("expression: {msg} at offset {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while self.eat(b'*') {
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(match self.unary()? {
                Expr::Const(c) => Expr::Const(-c),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.atom()
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn digits(&mut self) -> Result<usize> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.error("expected coordinate index"))
    }

    fn args(&mut self) -> Result<Vec<Expr>> {
        self.expect(b'(')?;
        let mut v = vec![self.expr()?];
        while self.eat(b',') {
            v.push(self.expr()?);
        }
        self.expect(b')')?;
        Ok(v)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let name = self.ident();
                match name.as_str() {
                    "x" => {
                        if self.src.get(self.pos) == Some(&b'[') {
                            self.pos += 1;
                            let i = self.digits()?;
                            self.expect(b']')?;
                            Ok(Expr::Coord(i))
                        } else {
                            Ok(Expr::Coord(self.digits()?))
                        }
                    }
                    "min" | "max" => {
                        let args = self.args()?;
                        if args.len() < 2 {
                            return Err(self.error(&format!("{name} needs at least two arguments")));
                        }
                        Ok(if name == "min" {
                            Expr::Min(args)
                        } else {
                            Expr::Max(args)
                        })
                    }
                    "clamp" => {
                        let mut a = self.args()?;
                        if a.len() != 3 {
                            return Err(self.error("clamp takes (value, lo, hi)"));
                        }
                        let hi = a.pop().unwrap();
                        let lo = a.pop().unwrap();
                        let v = a.pop().unwrap();
                        Ok(Expr::Clamp(Box::new(v), Box::new(lo), Box::new(hi)))
                    }
                    "step" => {
                        let mut a = self.args()?;
                        if a.len() != 2 {
                            return Err(self.error("step takes (value, threshold)"));
                        }
                        let t = a.pop().unwrap();
                        let v = a.pop().unwrap();
                        Ok(Expr::Step(Box::new(v), Box::new(t)))
                    }
                    other => Err(self.error(&format!("unknown identifier '{other}'"))),
                }
            }
            _ => Err(self.error("expected a number, coordinate, function or '('")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            let exp_sign =
                (c == b'-' || c == b'+') && self.pos > start && matches!(self.src[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Expr::Const)
            .ok_or_else(|| self.error(&format!("bad number '{text}'")))
    }
}

// ---------------------------------------------------------------------------
// Bounded function
// ---------------------------------------------------------------------------

/// The running payoff `g` together with its declared sup-norm bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundedFunction {
    expr: Expr,
    source: String,
    bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundedFunctionDocument {
    pub expr: String,
    pub bound: f64,
}

impl BoundedFunction {
    pub fn new(source: &str, bound: f64) -> Result<Self> {
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::invalid(format!("bound must be finite and ≥ 0, got {bound}")));
        }
        let expr = parse_expr(source)?;
        let (lo, hi) = expr.interval();
        if !(lo >= -bound && hi <= bound) {
            return Err(Error::invalid(format!(
                "cannot prove '{source}' lies within ±{bound} (provable range [{lo}, {hi}]); wrap it in clamp(...)"
            )));
        }
        Ok(Self {
            expr,
            source: source.to_string(),
            bound,
        })
    }

    pub fn constant(c: f64) -> Self {
        Self::new(&format!("{c:?}"), c.abs()).expect("constants are bounded by their magnitude")
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Number of coordinates the expression reads.
    pub fn arity(&self) -> usize {
        self.expr.max_coord().map_or(0, |i| i + 1)
    }

    pub fn to_document(&self) -> BoundedFunctionDocument {
        BoundedFunctionDocument {
            expr: self.source.clone(),
            bound: self.bound,
        }
    }
}

impl TryFrom<&BoundedFunctionDocument> for BoundedFunction {
    type Error = Error;

    fn try_from(d: &BoundedFunctionDocument) -> Result<Self> {
        BoundedFunction::new(&d.expr, d.bound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_and_evaluates() {
        let e = parse_expr("clamp(x0 + 0.5*x[1], -1, 1)").unwrap();
        assert_eq!(e.eval(&[0.25, 0.5]), 0.5);
        assert_eq!(e.eval(&[3.0, 0.0]), 1.0);
        assert_eq!(parse_expr("step(x0, 1)").unwrap().eval(&[1.0]), 1.0);
        assert_eq!(parse_expr("step(x0, 1)").unwrap().eval(&[0.999]), 0.0);
        assert_eq!(parse_expr("min(2, 3, -1)").unwrap().eval(&[]), -1.0);
        assert_eq!(parse_expr("-2*3 - 1").unwrap().eval(&[]), -7.0);
        assert_eq!(parse_expr("1e-1 * 10").unwrap().eval(&[]), 1.0);
    }

    #[test]
    fn rejects_unprovable_bounds() {
        assert!(BoundedFunction::new("x0", 10.0).is_err());
        assert!(BoundedFunction::new("clamp(x0, -1, 2)", 1.0).is_err());
        assert!(BoundedFunction::new("clamp(x0, -1, 2)", 2.0).is_ok());
        assert!(BoundedFunction::new("step(x0, 0) - step(x1, 0)", 1.0).is_ok());
        assert!(BoundedFunction::new("clamp(x0, -1, 1) * x1", 5.0).is_err());
        assert!(BoundedFunction::new("0.5 * clamp(x0*x1, -1, 1) + 0.5", 1.0).is_ok());
    }

    #[test]
    fn parse_errors() {
        for bad in ["", "x", "clamp(x0, 1)", "foo(1)", "1 +", "(1", "1 2"] {
            assert!(matches!(parse_expr(bad), Err(Error::Parse(_))), "{bad}");
        }
    }

    #[test]
    fn constant_helper() {
        let g = BoundedFunction::constant(-1.5);
        assert_eq!(g.eval(&[42.0]), -1.5);
        assert_eq!(g.bound(), 1.5);
        assert_eq!(g.arity(), 0);
    }

    proptest! {
        #[test]
        fn accepted_expressions_respect_their_bound(
            a in -1e6f64..1e6, b in -1e6f64..1e6, w in -3.0f64..3.0, t in -2.0f64..2.0,
        ) {
            let g = BoundedFunction::new(
                "0.5*clamp(x0 * x1, -2, 2) + max(step(x0, 1), -1) - min(clamp(x1, -1, 1), 0)",
                3.0,
            ).unwrap();
            let v = g.eval(&[a * w, b + t]);
            prop_assert!(v.abs() <= g.bound());
        }
    }
}
