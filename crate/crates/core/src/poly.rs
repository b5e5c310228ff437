//! Sparse multivariate polynomials and polynomial vector fields.
//!
//! Every catalogue frame is polynomial, so Jacobians, Hessians and iterated
//! Lie brackets are computed symbolically and evaluated exactly.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SrError};

/// Polynomial in `nvars` real variables, stored as exponent vector -> coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(c, vec![0; nvars]);
        p
    }

    /// The coordinate function `x_i` (zero-based).
    pub fn variable(nvars: usize, i: usize) -> Self {
        let mut powers = vec![0; nvars];
        powers[i] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(1.0, powers);
        p
    }

    pub fn monomial(coeff: f64, powers: Vec<u32>) -> Self {
        let mut p = Self::zero(powers.len());
        p.add_term(coeff, powers);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(k, v)| (k.as_slice(), *v))
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|k| k.iter().sum())
            .max()
            .unwrap_or(0)
    }

    fn add_term(&mut self, coeff: f64, powers: Vec<u32>) {
        debug_assert_eq!(powers.len(), self.nvars);
        if coeff == 0.0 {
            return;
        }
        let entry = self.terms.entry(powers).or_insert(0.0);
        *entry += coeff;
        if *entry == 0.0 {
            self.terms.retain(|_, v| *v != 0.0);
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(powers, c)| {
                powers
                    .iter()
                    .zip(x)
                    .fold(*c, |acc, (&p, &xi)| acc * xi.powi(p as i32))
            })
            .sum()
    }

    pub fn derivative(&self, var: usize) -> Polynomial {
        let mut out = Self::zero(self.nvars);
        for (powers, c) in &self.terms {
            let p = powers[var];
            if p == 0 {
                continue;
            }
            let mut lowered = powers.clone();
            lowered[var] -= 1;
            out.add_term(c * p as f64, lowered);
        }
        out
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (powers, c) in &other.terms {
            out.add_term(*c, powers.clone());
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Self::zero(self.nvars);
        for (powers, c) in &self.terms {
            out.add_term(c * s, powers.clone());
        }
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Self::zero(self.nvars);
        for (pa, ca) in &self.terms {
            for (pb, cb) in &other.terms {
                let powers = pa.iter().zip(pb).map(|(a, b)| a + b).collect();
                out.add_term(ca * cb, powers);
            }
        }
        out
    }

    /// Parses expressions such as `1`, `-x2/2`, `x1^2/2 + 3*x1*x3`.
    ///
    /// Variables are written `x1 .. xn` (one-based). Division is only allowed
    /// by numeric literals.
    pub fn parse(src: &str, nvars: usize) -> Result<Polynomial> {
        let mut parser = Parser {
            chars: src.chars().filter(|c| !c.is_whitespace()).collect(),
            pos: 0,
            nvars,
        };
        let p = parser.sum()?;
        if parser.pos != parser.chars.len() {
            return Err(SrError::Parse(format!(
                "unexpected '{}' in polynomial '{}'",
                parser.chars[parser.pos], src
            )));
        }
        Ok(p)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, (powers, c)) in self.terms.iter().enumerate() {
            let sign = if *c < 0.0 { "-" } else if idx > 0 { "+" } else { "" };
            if idx > 0 {
                write!(f, " {} ", sign)?;
            } else {
                write!(f, "{}", sign)?;
            }
            let mag = c.abs();
            let vars: Vec<String> = powers
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0)
                .map(|(i, p)| {
                    if *p == 1 {
                        format!("x{}", i + 1)
                    } else {
                        format!("x{}^{}", i + 1, p)
                    }
                })
                .collect();
            if vars.is_empty() {
                write!(f, "{:?}", mag)?;
            } else if mag == 1.0 {
                write!(f, "{}", vars.join("*"))?;
            } else {
                write!(f, "{:?}*{}", mag, vars.join("*"))?;
            }
        }
        Ok(())
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    nvars: usize,
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn sum(&mut self) -> Result<Polynomial> {
        let mut acc = Polynomial::zero(self.nvars);
        let mut first = true;
        loop {
            let sign = match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    1.0
                }
                Some('-') => {
                    self.pos += 1;
                    -1.0
                }
                _ if first => 1.0,
                _ => break,
            };
            first = false;
            let t = self.product()?;
            acc = acc.add(&t.scale(sign));
            if self.peek().is_none() {
                break;
            }
        }
        Ok(acc)
    }

    fn product(&mut self) -> Result<Polynomial> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some('*') => {
                    self.pos += 1;
                    let f = self.factor()?;
                    acc = acc.mul(&f);
                }
                Some('/') => {
                    self.pos += 1;
                    let d = self.number()?;
                    if d == 0.0 {
                        return Err(SrError::Parse("division by zero".into()));
                    }
                    acc = acc.scale(1.0 / d);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Polynomial> {
        match self.peek() {
            Some('x') => {
                self.pos += 1;
                let idx = self.integer()? as usize;
                if idx == 0 || idx > self.nvars {
                    return Err(SrError::Parse(format!(
                        "variable x{} out of range 1..={}",
                        idx, self.nvars
                    )));
                }
                let mut power = 1;
                if self.peek() == Some('^') {
                    self.pos += 1;
                    power = self.integer()?;
                }
                let mut powers = vec![0; self.nvars];
                powers[idx - 1] = power;
                Ok(Polynomial::monomial(1.0, powers))
            }
            Some('(') => {
                self.pos += 1;
                let inner = self.sum()?;
                if self.peek() != Some(')') {
                    return Err(SrError::Parse("missing ')'".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let v = self.number()?;
                Ok(Polynomial::constant(self.nvars, v))
            }
            other => Err(SrError::Parse(format!("unexpected token {:?}", other))),
        }
    }

    fn integer(&mut self) -> Result<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse()
            .map_err(|_| SrError::Parse(format!("expected integer at position {}", start)))
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            let exp_sign = (c == '-' || c == '+')
                && self.pos > start
                && matches!(self.chars[self.pos - 1], 'e' | 'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse()
            .map_err(|_| SrError::Parse(format!("bad number '{}'", s)))
    }
}

/// Flat evaluation form of a [`Polynomial`]; zero powers are dropped.
#[derive(Clone, Debug, Default)]
pub(crate) struct CompiledPoly {
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl CompiledPoly {
    pub fn new(p: &Polynomial) -> Self {
        let terms = p
            .terms()
            .map(|(powers, c)| {
                let factors = powers
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| **e > 0)
                    .map(|(i, e)| (i, *e as i32))
                    .collect();
                (c, factors)
            })
            .collect();
        Self { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, factors) in &self.terms {
            let mut t = *c;
            for &(i, e) in factors {
                t *= if e == 1 { x[i] } else { x[i].powi(e) };
            }
            s += t;
        }
        s
    }
}

/// Polynomial vector field on R^n.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyField {
    components: Vec<Polynomial>,
}

impl PolyField {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(SrError::InvalidStructure("empty vector field".into()));
        }
        if components.iter().any(|c| c.nvars() != n) {
            return Err(SrError::InvalidStructure(
                "field components must be polynomials in n variables".into(),
            ));
        }
        Ok(Self { components })
    }

    /// Parses one expression per component, see [`Polynomial::parse`].
    pub fn parse<S: AsRef<str>>(components: &[S]) -> Result<Self> {
        let n = components.len();
        let comps = components
            .iter()
            .map(|c| Polynomial::parse(c.as_ref(), n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Polynomial::is_zero)
    }

    pub fn is_constant(&self) -> bool {
        self.components.iter().all(|c| c.degree() == 0)
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.components.iter().map(|c| c.eval(x)))
    }

    /// Symbolic Jacobian, `jac[c][d] = d f_c / d x_d`.
    pub fn jacobian(&self) -> Vec<Vec<Polynomial>> {
        let n = self.dim();
        self.components
            .iter()
            .map(|c| (0..n).map(|d| c.derivative(d)).collect())
            .collect()
    }

    /// Lie bracket `[self, other] = D(other) self - D(self) other`.
    pub fn bracket(&self, other: &PolyField) -> PolyField {
        let n = self.dim();
        let comps = (0..n)
            .map(|c| {
                let mut acc = Polynomial::zero(n);
                for d in 0..n {
                    acc = acc
                        .add(&self.components[d].mul(&other.components[c].derivative(d)))
                        .sub(&other.components[d].mul(&self.components[c].derivative(d)));
                }
                acc
            })
            .collect();
        PolyField { components: comps }
    }
}

/// Field together with compiled first and second derivatives.
#[derive(Clone, Debug)]
pub(crate) struct DifferentiatedField {
    pub field: PolyField,
    value: Vec<CompiledPoly>,
    // jac[c * n + d] = d f_c / d x_d
    jac: Vec<CompiledPoly>,
    // hess[(c * n + d) * n + e]
    hess: Vec<CompiledPoly>,
}

impl DifferentiatedField {
    pub fn new(field: PolyField) -> Self {
        let n = field.dim();
        let value = field.components().iter().map(CompiledPoly::new).collect();
        let sym_jac = field.jacobian();
        let mut jac = Vec::with_capacity(n * n);
        let mut hess = Vec::with_capacity(n * n * n);
        for row in &sym_jac {
            for p in row {
                jac.push(CompiledPoly::new(p));
                for e in 0..n {
                    hess.push(CompiledPoly::new(&p.derivative(e)));
                }
            }
        }
        Self {
            field,
            value,
            jac,
            hess,
        }
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.value.iter().map(|p| p.eval(x)))
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.value) {
            *o = p.eval(x);
        }
    }

    /// Row-major Jacobian into `out` (length n*n).
    #[inline]
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.jac) {
            *o = if p.is_zero() { 0.0 } else { p.eval(x) };
        }
    }

    pub fn jacobian_at(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |c, d| self.jac[c * n + d].eval(x))
    }

    /// Frobenius norm of the second-derivative tensor.
    pub fn hessian_norm_at(&self, x: &[f64]) -> f64 {
        self.hess
            .iter()
            .filter(|p| !p.is_zero())
            .map(|p| p.eval(x).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Applies the second-derivative tensor to `(a, b)`.
    pub fn hessian_apply(&self, x: &[f64], a: &[f64], b: &[f64]) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |c, _| {
            let mut s = 0.0;
            for d in 0..n {
                for e in 0..n {
                    let h = &self.hess[(c * n + d) * n + e];
                    if !h.is_zero() {
                        s += h.eval(x) * a[d] * b[e];
                    }
                }
            }
            s
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_eval() {
        let p = Polynomial::parse("x1^2/2 - 3*x2 + 0.5", 2).unwrap();
        assert_eq!(p.eval(&[2.0, 1.0]), 2.0 - 3.0 + 0.5);
        let q = Polynomial::parse("-(x1 + x2)*x1", 2).unwrap();
        assert_eq!(q.eval(&[1.0, 2.0]), -3.0);
        assert!(Polynomial::parse("x3", 2).is_err());
        assert!(Polynomial::parse("x1/x2", 2).is_err());
        assert!(Polynomial::parse("1e-3*x1", 1).unwrap().eval(&[2.0]) == 2e-3);
    }

    #[test]
    fn derivative_and_product() {
        let p = Polynomial::parse("x1^3*x2 + x2", 2).unwrap();
        let d1 = p.derivative(0);
        assert_eq!(d1, Polynomial::parse("3*x1^2*x2", 2).unwrap());
        let sq = p.mul(&p);
        assert_eq!(sq.eval(&[1.5, -0.5]), p.eval(&[1.5, -0.5]).powi(2));
        assert!(p.sub(&p).is_zero());
    }

    #[test]
    fn display_roundtrips_through_parser() {
        let p = Polynomial::parse("-x2^2/2 + 0.25*x1*x3 + 7", 3).unwrap();
        let again = Polynomial::parse(&p.to_string(), 3).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn heisenberg_bracket_is_vertical() {
        let f1 = PolyField::parse(&["1", "0", "-x2/2"]).unwrap();
        let f2 = PolyField::parse(&["0", "1", "x1/2"]).unwrap();
        let b = f1.bracket(&f2);
        assert_eq!(b, PolyField::parse(&["0", "0", "1"]).unwrap());
        assert!(f1.bracket(&f1).is_zero());
    }
}
