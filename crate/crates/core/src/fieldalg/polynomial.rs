//! Sparse multivariate polynomials over `x1..xn` with exact differentiation.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// A polynomial in `nvars` variables stored as a map from exponent vectors to
/// coefficients. Zero coefficients are never stored.
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

    pub fn constant(nvars: usize, value: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], value);
        p
    }

    /// The coordinate function `x_{index+1}` (zero-based `index`).
    pub fn variable(nvars: usize, index: usize) -> Self {
        assert!(index < nvars, "variable index {index} out of range");
        let mut exps = vec![0; nvars];
        exps[index] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(exps, 1.0);
        p
    }

    /// Builds a polynomial from `(coefficient, exponents)` pairs, merging duplicates.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (f64, Vec<u32>)>,
    {
        let mut p = Self::zero(nvars);
        for (c, e) in terms {
            assert_eq!(e.len(), nvars, "exponent vector length mismatch");
            p.add_term(e, c);
        }
        p
    }

    fn add_term(&mut self, exps: Vec<u32>, coef: f64) {
        if coef == 0.0 {
            return;
        }
        match self.terms.entry(exps) {
            Entry::Vacant(v) => {
                v.insert(coef);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += coef;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(e, c)| (e.as_slice(), *c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// `Some(c)` when the polynomial is the constant `c`.
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => {
                let (e, c) = self.terms.iter().next().unwrap();
                e.iter().all(|&k| k == 0).then_some(*c)
            }
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        let mut acc = 0.0;
        for (exps, coef) in &self.terms {
            let mut m = *coef;
            for (xi, &k) in x.iter().zip(exps) {
                if k != 0 {
                    m *= xi.powi(k as i32);
                }
            }
            acc += m;
        }
        acc
    }

    /// Exact partial derivative with respect to variable `index` (zero-based).
    pub fn derivative(&self, index: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (exps, coef) in &self.terms {
            let k = exps[index];
            if k == 0 {
                continue;
            }
            let mut e = exps.clone();
            e[index] -= 1;
            out.add_term(e, coef * k as f64);
        }
        out
    }

    pub fn scale(&self, factor: f64) -> Self {
        if factor == 0.0 {
            return Self::zero(self.nvars);
        }
        Self {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), c * factor)).collect(),
        }
    }

    pub fn pow(&self, exponent: u32) -> Self {
        let mut result = Self::constant(self.nvars, 1.0);
        let mut base = self.clone();
        let mut k = exponent;
        while k > 0 {
            if k & 1 == 1 {
                result = &result * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// Re-embeds the polynomial into a space with `nvars >= self.nvars` variables;
    /// the extra variables do not appear.
    pub fn extend_vars(&self, nvars: usize) -> Self {
        assert!(nvars >= self.nvars);
        Self {
            nvars,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| {
                    let mut e = e.clone();
                    e.resize(nvars, 0);
                    (e, *c)
                })
                .collect(),
        }
    }

    /// Largest absolute coefficient, zero for the zero polynomial.
    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn check_compatible(&self, other: &Self) {
        assert_eq!(
            self.nvars, other.nvars,
            "polynomials live in different variable spaces"
        );
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.check_compatible(rhs);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.check_compatible(rhs);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), -*c);
        }
        out
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.check_compatible(rhs);
        let mut out = Polynomial::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $m(self, rhs: Polynomial) -> Polynomial {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Infix rendering that the expression parser reads back exactly
/// (`f64` display is the shortest round-tripping decimal).
impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        // highest total degree first, reads more naturally
        let mut terms: Vec<_> = self.terms.iter().collect();
        terms.sort_by(|(ea, _), (eb, _)| {
            let da: u32 = ea.iter().sum();
            let db: u32 = eb.iter().sum();
            db.cmp(&da).then_with(|| eb.cmp(ea))
        });
        for (i, (exps, coef)) in terms.into_iter().enumerate() {
            let is_const = exps.iter().all(|&k| k == 0);
            let mag = coef.abs();
            if i == 0 {
                if *coef < 0.0 {
                    write!(f, "-")?;
                }
            } else if *coef < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut first = true;
            if is_const || mag != 1.0 {
                write!(f, "{mag}")?;
                first = false;
            }
            for (v, &k) in exps.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                if !first {
                    write!(f, "*")?;
                }
                first = false;
                if k == 1 {
                    write!(f, "x{}", v + 1)?;
                } else {
                    write!(f, "x{}^{}", v + 1, k)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(n: usize, i: usize) -> Polynomial {
        Polynomial::variable(n, i)
    }

    #[test]
    fn arithmetic_and_eval() {
        // (x1 + 2 x2)^2 = x1^2 + 4 x1 x2 + 4 x2^2
        let p = (&x(2, 0) + &x(2, 1).scale(2.0)).pow(2);
        assert_eq!(p.num_terms(), 3);
        assert_eq!(p.eval(&[1.0, 3.0]), 49.0);
        assert_eq!(p.degree(), 2);
    }

    #[test]
    fn cancellation_removes_terms() {
        let p = &x(3, 1) - &x(3, 1);
        assert!(p.is_zero());
        assert_eq!(p.as_constant(), Some(0.0));
    }

    #[test]
    fn derivative_is_exact() {
        // d/dx1 (x1^3 x2 - 5 x1) = 3 x1^2 x2 - 5
        let p = &(&x(2, 0).pow(3) * &x(2, 1)) - &x(2, 0).scale(5.0);
        let d = p.derivative(0);
        let expected = &(&x(2, 0).pow(2) * &x(2, 1)).scale(3.0) - &Polynomial::constant(2, 5.0);
        assert_eq!(d, expected);
        assert!(p.derivative(0).derivative(0).derivative(0).derivative(0).is_zero());
    }

    #[test]
    fn display_forms() {
        let p = &(&x(3, 0).pow(2).scale(-0.5) + &x(3, 2)) + &Polynomial::constant(3, 1.0);
        assert_eq!(p.to_string(), "-0.5*x1^2 + x3 + 1");
        assert_eq!(Polynomial::zero(2).to_string(), "0");
        assert_eq!((-&x(2, 1)).to_string(), "-x2");
    }

    #[test]
    fn extend_vars_keeps_values() {
        let p = &x(2, 0) * &x(2, 1);
        let q = p.extend_vars(3);
        assert_eq!(q.eval(&[2.0, 3.0, 100.0]), 6.0);
    }
}
