//! Polynomials in `t, x1..x{2n+1}` with a small text syntax.
//!
//! Grammar: `+ - * /` (division by constants only), `^` with a nonnegative
//! integer exponent, parentheses, decimal numbers and the variables `t`,
//! `x1`, ..., `x{2n+1}`. Example: `12*t^2 + 12*x1^2*t + x1^4`.

use std::collections::BTreeMap;
use std::fmt;

use crate::calculus::{assemble_jet, EuclideanDerivatives, ScalarField};
use crate::error::{Error, Result};
use crate::heis::HPoint;

/// Exponents over `(t, x_1, ..., x_{2n+1})`.
type Monomial = Vec<u32>;

#[derive(Clone, PartialEq)]
pub struct Polynomial {
    n: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        let mut p = Self::zero(n);
        if c != 0.0 {
            p.terms.insert(vec![0; 2 * n + 2], c);
        }
        p
    }

    /// Variable `0` is `t`, variable `k ≥ 1` is `x_k`.
    pub fn variable(n: usize, var: usize) -> Self {
        let mut e = vec![0; 2 * n + 2];
        e[var] = 1;
        let mut p = Self::zero(n);
        p.terms.insert(e, 1.0);
        p
    }

    pub fn parse(src: &str, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("group index n must be at least 1".into()));
        }
        let mut parser = Parser {
            tokens: tokenize(src)?,
            pos: 0,
            n,
        };
        let p = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Parse(format!(
                "unexpected '{}' in '{src}'",
                parser.tokens[parser.pos]
            )));
        }
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => {
                let (e, c) = self.terms.iter().next().unwrap();
                e.iter().all(|&k| k == 0).then_some(*c)
            }
            _ => None,
        }
    }

    fn add(mut self, other: &Self, sign: f64) -> Self {
        for (e, c) in &other.terms {
            let entry = self.terms.entry(e.clone()).or_insert(0.0);
            *entry += sign * c;
            if *entry == 0.0 {
                self.terms.remove(e);
            }
        }
        self
    }

    fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.n);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Monomial = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *out.terms.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        out.terms.retain(|_, c| *c != 0.0);
        out
    }

    fn scale(mut self, s: f64) -> Self {
        for c in self.terms.values_mut() {
            *c *= s;
        }
        self.terms.retain(|_, c| *c != 0.0);
        self
    }

    fn pow(&self, k: u32) -> Self {
        let mut out = Self::constant(self.n, 1.0);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// `∂/∂(var)`.
    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Self::zero(self.n);
        for (e, c) in &self.terms {
            if e[var] > 0 {
                let mut d = e.clone();
                d[var] -= 1;
                *out.terms.entry(d).or_insert(0.0) += c * e[var] as f64;
            }
        }
        out
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (e, c) in &self.terms {
            let mut term = *c;
            if e[0] > 0 {
                term *= t.powi(e[0] as i32);
            }
            for (k, &ek) in e[1..].iter().enumerate() {
                if ek > 0 {
                    term *= x[k].powi(ek as i32);
                }
            }
            total += term;
        }
        total
    }

    /// Largest total degree in the horizontal variables.
    pub fn horizontal_degree(&self) -> u32 {
        let m = 2 * self.n;
        self.terms
            .keys()
            .map(|e| e[1..=m].iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Field with an exact jet built from symbolic derivatives.
    pub fn into_field(self, label: impl Into<String>) -> ScalarField {
        let n = self.n;
        let d = 2 * n + 1;
        let dt = self.derivative(0);
        let grad: Vec<Polynomial> = (1..=d).map(|k| self.derivative(k)).collect();
        let hess: Vec<Polynomial> = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| grad[i].derivative(j + 1))
            .collect();
        let value = self.clone();
        ScalarField::new(n, label, move |t, x| value.eval(t, x.coords())).with_jet(
            move |t, x: &HPoint| {
                let c = x.coords();
                let derivs = EuclideanDerivatives {
                    value: self.eval(t, c),
                    dt: dt.eval(t, c),
                    grad: grad.iter().map(|g| g.eval(t, c)).collect(),
                    hess: hess.iter().map(|h| h.eval(t, c)).collect(),
                };
                assemble_jet(x, &derivs)
            },
        )
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (e, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "{c}")?;
            for (k, &ek) in e.iter().enumerate() {
                if ek == 0 {
                    continue;
                }
                let name = if k == 0 { "t".to_string() } else { format!("x{k}") };
                if ek == 1 {
                    write!(f, "*{name}")?;
                } else {
                    write!(f, "*{name}^{ek}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "{v}"),
            Token::Ident(s) => f.write_str(s),
            Token::Op(c) => write!(f, "{c}"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
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
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Parse(format!("bad number '{text}'")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(Error::Parse(format!("unexpected character '{c}'")));
        }
    }
    if out.is_empty() {
        return Err(Error::Parse("empty expression".into()));
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    n: usize,
}

impl Parser {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Polynomial> {
        let mut acc = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = acc.add(&rhs, if op == '+' { 1.0 } else { -1.0 });
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut acc = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = if op == '*' {
                acc.mul(&rhs)
            } else {
                match rhs.is_constant() {
                    Some(c) if c != 0.0 => acc.scale(1.0 / c),
                    Some(_) => return Err(Error::Parse("division by zero".into())),
                    None => return Err(Error::Parse("can only divide by constants".into())),
                }
            };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Polynomial> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(self.unary()?.scale(-1.0))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Polynomial> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            match self.tokens.get(self.pos) {
                Some(Token::Num(k)) if k.fract() == 0.0 && *k >= 0.0 && *k <= 64.0 => {
                    let k = *k as u32;
                    self.pos += 1;
                    Ok(base.pow(k))
                }
                other => Err(Error::Parse(format!(
                    "exponent must be an integer in 0..=64, got {}",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
                ))),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Polynomial> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Parse("unexpected end of expression".into()))?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Polynomial::constant(self.n, v)),
            Token::Ident(name) => self.variable(&name),
            Token::Op('(') => {
                let inner = self.expr()?;
                if self.peek_op() != Some(')') {
                    return Err(Error::Parse("missing ')'".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Token::Op(c) => Err(Error::Parse(format!("unexpected '{c}'"))),
        }
    }

    fn variable(&self, name: &str) -> Result<Polynomial> {
        if name == "t" {
            return Ok(Polynomial::variable(self.n, 0));
        }
        if let Some(idx) = name.strip_prefix('x') {
            if let Ok(k) = idx.parse::<usize>() {
                if (1..=2 * self.n + 1).contains(&k) {
                    return Ok(Polynomial::variable(self.n, k));
                }
                return Err(Error::Parse(format!(
                    "variable {name} outside x1..x{} for n = {}",
                    2 * self.n + 1,
                    self.n
                )));
            }
        }
        Err(Error::Parse(format!("unknown name '{name}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{delta_h, jet_fd};

    #[test]
    fn parses_and_evaluates() {
        let p = Polynomial::parse("12*t^2 + 12*x1^2*t + x1^4", 1).unwrap();
        assert_eq!(p.eval(1.0, &[0.0, 0.0, 0.0]), 12.0);
        assert_eq!(p.eval(0.5, &[2.0, 9.0, 9.0]), 3.0 + 24.0 + 16.0);
        assert_eq!(p.horizontal_degree(), 4);
        let q = Polynomial::parse("-(x1 - 1/8)*2 + x3", 1).unwrap();
        assert_eq!(q.eval(0.0, &[1.0, 0.0, 0.5]), -1.75 + 0.5);
        assert_eq!(Polynomial::parse("1.5e1*x5", 2).unwrap().eval(0.0, &[0.0, 0.0, 0.0, 0.0, 2.0]), 30.0);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in ["", "x4", "x1 +", "x1^x2", "x1/x2", "1/0", "(x1", "y", "x1 $ 2", "x1^-1"] {
            assert!(Polynomial::parse(bad, 1).is_err(), "{bad}");
        }
    }

    #[test]
    fn analytic_jet_matches_finite_differences() {
        let p = Polynomial::parse("x1^3*x2 - 2*x3*x1 + t*x2^2 + x3^2", 1).unwrap();
        let f = p.into_field("poly");
        let x = HPoint::new(1, &[0.3, -0.4, 0.7]).unwrap();
        let a = f.analytic_jet(0.6, &x).unwrap();
        let b = jet_fd(&f, 0.6, &x, 1e-4).unwrap();
        assert!((a.dt - b.dt).abs() < 1e-7);
        assert!((a.vert - b.vert).abs() < 1e-7);
        for (u, v) in a.grad0.iter().zip(&b.grad0) {
            assert!((u - v).abs() < 1e-7);
        }
        for (u, v) in a.hess.iter().zip(&b.hess) {
            assert!((u - v).abs() < 1e-5);
        }
        assert!((delta_h(&a) - delta_h(&b)).abs() < 1e-5);
    }
}
