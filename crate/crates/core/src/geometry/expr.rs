//! A small arithmetic grammar over `x1`, `x2` used for weight fields.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 'x1' | 'x2' | 'pi' | func '(' expr ')' | '(' expr ')'
//! func   := sqrt | exp | log | sin | cos | tanh | abs
//! ```
//! Evaluation carries forward-mode derivatives, so every expression comes with an exact gradient.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X1,
    X2,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Value with gradient in (x1, x2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub g: [f64; 2],
}

impl Dual {
    fn cst(v: f64) -> Self {
        Dual { v, g: [0.0, 0.0] }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        Dual { v, g: [dv * self.g[0], dv * self.g[1]] }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.eval_dual(x).v
    }

    pub fn eval_dual(&self, x: [f64; 2]) -> Dual {
        match self {
            Expr::Num(c) => Dual::cst(*c),
            Expr::X1 => Dual { v: x[0], g: [1.0, 0.0] },
            Expr::X2 => Dual { v: x[1], g: [0.0, 1.0] },
            Expr::Neg(a) => {
                let a = a.eval_dual(x);
                Dual { v: -a.v, g: [-a.g[0], -a.g[1]] }
            }
            Expr::Add(a, b) => {
                let (a, b) = (a.eval_dual(x), b.eval_dual(x));
                Dual { v: a.v + b.v, g: [a.g[0] + b.g[0], a.g[1] + b.g[1]] }
            }
            Expr::Sub(a, b) => {
                let (a, b) = (a.eval_dual(x), b.eval_dual(x));
                Dual { v: a.v - b.v, g: [a.g[0] - b.g[0], a.g[1] - b.g[1]] }
            }
            Expr::Mul(a, b) => {
                let (a, b) = (a.eval_dual(x), b.eval_dual(x));
                Dual { v: a.v * b.v, g: [a.g[0] * b.v + a.v * b.g[0], a.g[1] * b.v + a.v * b.g[1]] }
            }
            Expr::Div(a, b) => {
                let (a, b) = (a.eval_dual(x), b.eval_dual(x));
                let q = a.v / b.v;
                Dual { v: q, g: [(a.g[0] - q * b.g[0]) / b.v, (a.g[1] - q * b.g[1]) / b.v] }
            }
            Expr::Pow(a, b) => {
                let (a, b) = (a.eval_dual(x), b.eval_dual(x));
                let v = a.v.powf(b.v);
                // d(a^b) = b a^(b-1) da + a^b ln(a) db
                let da = if a.v == 0.0 { 0.0 } else { b.v * a.v.powf(b.v - 1.0) };
                let db = if b.g == [0.0, 0.0] { 0.0 } else { v * a.v.ln() };
                Dual { v, g: [da * a.g[0] + db * b.g[0], da * a.g[1] + db * b.g[1]] }
            }
            Expr::Call(f, a) => {
                let a = a.eval_dual(x);
                match f {
                    Func::Sqrt => {
                        let s = a.v.sqrt();
                        a.chain(s, 0.5 / s)
                    }
                    Func::Exp => {
                        let e = a.v.exp();
                        a.chain(e, e)
                    }
                    Func::Log => a.chain(a.v.ln(), 1.0 / a.v),
                    Func::Sin => a.chain(a.v.sin(), a.v.cos()),
                    Func::Cos => a.chain(a.v.cos(), -a.v.sin()),
                    Func::Tanh => {
                        let t = a.v.tanh();
                        a.chain(t, 1.0 - t * t)
                    }
                    Func::Abs => a.chain(a.v.abs(), a.v.signum()),
                }
            }
        }
    }

    /// Substitutes `x1 → x1 − dx`, `x2 → x2 − dy`.
    pub fn shifted(&self, dx: f64, dy: f64) -> Expr {
        let b = |e: &Expr| Box::new(e.shifted(dx, dy));
        match self {
            Expr::Num(c) => Expr::Num(*c),
            Expr::X1 => Expr::Sub(Box::new(Expr::X1), Box::new(Expr::Num(dx))),
            Expr::X2 => Expr::Sub(Box::new(Expr::X2), Box::new(Expr::Num(dy))),
            Expr::Neg(a) => Expr::Neg(b(a)),
            Expr::Add(x, y) => Expr::Add(b(x), b(y)),
            Expr::Sub(x, y) => Expr::Sub(b(x), b(y)),
            Expr::Mul(x, y) => Expr::Mul(b(x), b(y)),
            Expr::Div(x, y) => Expr::Div(b(x), b(y)),
            Expr::Pow(x, y) => Expr::Pow(b(x), b(y)),
            Expr::Call(f, a) => Expr::Call(*f, b(a)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(f, "{c:?}"),
            Expr::X1 => write!(f, "x1"),
            Expr::X2 => write!(f, "x2"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Expression { pos: self.pos + 1, msg: msg.to_string() }
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

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(c) = self.peek() {
            match c {
                b'+' => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                b'-' => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.peek() {
            match c {
                b'*' => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                b'/' => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek() == Some(b'+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
                    self.pos += 1;
                }
                if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
                    let save = self.pos;
                    self.pos += 1;
                    if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                        self.pos += 1;
                    }
                    let digits = self.pos;
                    while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                    if digits == self.pos {
                        self.pos = save;
                    }
                }
                let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                s.parse::<f64>().map(Expr::Num).map_err(|_| {
                    self.pos = start;
                    self.err("malformed number")
                })
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                match name {
                    "x1" | "x" => Ok(Expr::X1),
                    "x2" | "y" => Ok(Expr::X2),
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "one" => Ok(Expr::Num(1.0)),
                    _ => {
                        let f = Func::from_name(name).ok_or_else(|| {
                            self.pos = start;
                            self.err(&format!("unknown identifier '{name}'"))
                        })?;
                        if self.peek() != Some(b'(') {
                            return Err(self.err("expected '(' after function name"));
                        }
                        self.pos += 1;
                        let arg = self.expr()?;
                        if self.peek() != Some(b')') {
                            return Err(self.err("expected ')'"));
                        }
                        self.pos += 1;
                        Ok(Expr::Call(f, Box::new(arg)))
                    }
                }
            }
            Some(_) => Err(self.err("unexpected character")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_values() {
        let e = Expr::parse("1 + 2*x1^2 - x2/4").unwrap();
        assert_eq!(e.eval([3.0, 8.0]), 1.0 + 18.0 - 2.0);
        let e = Expr::parse("-x1^2").unwrap();
        assert_eq!(e.eval([3.0, 0.0]), -9.0);
        let e = Expr::parse("2^-1").unwrap();
        assert_eq!(e.eval([0.0, 0.0]), 0.5);
        assert_eq!(Expr::parse("1.5e-1").unwrap().eval([0.0, 0.0]), 0.15);
        assert_eq!(Expr::parse("one").unwrap().eval([4.0, 1.0]), 1.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let e = Expr::parse("exp(0.3*x1)*(2 + sin(x2)) + sqrt(1 + x1^2) / (3 + cos(x1*x2))").unwrap();
        for &(x, y) in &[(0.3, 0.1), (1.7, -0.4), (-0.5, 2.0)] {
            let d = e.eval_dual([x, y]);
            let h = 1e-6;
            let gx = (e.eval([x + h, y]) - e.eval([x - h, y])) / (2.0 * h);
            let gy = (e.eval([x, y + h]) - e.eval([x, y - h])) / (2.0 * h);
            assert!((d.g[0] - gx).abs() < 1e-7, "{} vs {}", d.g[0], gx);
            assert!((d.g[1] - gy).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_code_and_garbage() {
        assert!(Expr::parse("system(1)").is_err());
        assert!(Expr::parse("x1 +").is_err());
        assert!(Expr::parse("(x1").is_err());
        assert!(Expr::parse("x1 x2").is_err());
        match Expr::parse("x1 + foo") {
            Err(Error::Expression { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shift_translates() {
        let e = Expr::parse("x1*x2 + x1").unwrap();
        let s = e.shifted(2.0, -1.0);
        assert_eq!(s.eval([5.0, 0.0]), e.eval([3.0, 1.0]));
    }
}
