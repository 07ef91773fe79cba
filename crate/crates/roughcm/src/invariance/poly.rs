//! Exact polynomials over the coefficient atoms α_i and named parameters,
//! and polynomials in x whose coefficients are such polynomials.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sym {
    Alpha(u32),
    Param(String),
}

impl fmt::Display for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sym::Alpha(i) => write!(f, "α_{i}"),
            Sym::Param(p) => f.write_str(p),
        }
    }
}

/// Product of atoms with positive powers, kept sorted by atom.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(Vec<(Sym, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn atom(s: Sym) -> Self {
        Monomial(vec![(s, 1)])
    }

    pub fn factors(&self) -> &[(Sym, u32)] {
        &self.0
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, p)| p).sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(self.0[i].clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(other.0[j].clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((self.0[i].0.clone(), self.0[i].1 + other.0[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    /// Splits into the α part and the parameter part.
    fn split(&self) -> (Monomial, Monomial) {
        let (a, p): (Vec<_>, Vec<_>) = self.0.iter().cloned().partition(|(s, _)| matches!(s, Sym::Alpha(_)));
        (Monomial(a), Monomial(p))
    }
}

const SUPERSCRIPTS: [char; 10] = ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'];

pub(crate) fn superscript(n: u32) -> String {
    n.to_string().chars().map(|c| SUPERSCRIPTS[c.to_digit(10).unwrap_or(0) as usize]).collect()
}

impl fmt::Display for Monomial {
    /// Parameters first, joined by `·`, then the α atoms.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (alphas, params) = self.split();
        for (k, (s, p)) in params.0.iter().chain(&alphas.0).enumerate() {
            if k > 0 && k <= params.0.len() {
                f.write_str("·")?;
            }
            write!(f, "{s}")?;
            if *p > 1 {
                f.write_str(&superscript(*p))?;
            }
        }
        Ok(())
    }
}

/// Polynomial over [`Sym`] atoms with exact rational coefficients.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoeffPoly {
    terms: BTreeMap<Monomial, BigRational>,
}

pub fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

impl CoeffPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::constant(BigRational::one())
    }

    pub fn constant(c: BigRational) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn int(c: i64) -> Self {
        Self::constant(rational(c, 1))
    }

    pub fn atom(s: Sym) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::atom(s), BigRational::one());
        p
    }

    pub fn alpha(i: u32) -> Self {
        Self::atom(Sym::Alpha(i))
    }

    pub fn param(name: &str) -> Self {
        Self::atom(Sym::Param(name.to_string()))
    }

    pub fn add_term(&mut self, m: Monomial, c: BigRational) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry(m).or_insert_with(BigRational::zero);
        *e += c;
        if e.is_zero() {
            self.terms.retain(|_, v| !v.is_zero());
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The value if the polynomial is a constant.
    pub fn as_constant(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self.terms.get(&Monomial::one()).cloned(),
            _ => None,
        }
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        CoeffPoly { terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect() }
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Self::one();
        for _ in 0..n {
            out = &out * self;
        }
        out
    }

    pub fn atoms(&self) -> BTreeSet<Sym> {
        self.terms.keys().flat_map(|m| m.0.iter().map(|(s, _)| s.clone())).collect()
    }

    pub fn alpha_indices(&self) -> BTreeSet<u32> {
        self.atoms()
            .into_iter()
            .filter_map(|s| match s {
                Sym::Alpha(i) => Some(i),
                Sym::Param(_) => None,
            })
            .collect()
    }

    pub fn has_alpha(&self) -> bool {
        !self.alpha_indices().is_empty()
    }

    /// Replaces every atom for which `f` returns a value.
    pub fn substitute(&self, f: &dyn Fn(&Sym) -> Option<CoeffPoly>) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            let mut term = CoeffPoly::constant(c.clone());
            let mut kept = Monomial::one();
            for (s, p) in &m.0 {
                match f(s) {
                    Some(v) => term = &term * &v.pow(*p),
                    None => kept = kept.mul(&Monomial(vec![(s.clone(), *p)])),
                }
                if term.is_zero() {
                    break;
                }
            }
            for (tm, tc) in term.terms {
                out.add_term(tm.mul(&kept), tc);
            }
        }
        out
    }

    /// Sets the listed α atoms to zero.
    pub fn zero_alphas(&self, zeros: &BTreeSet<u32>) -> Self {
        if zeros.is_empty() {
            return self.clone();
        }
        CoeffPoly {
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| !m.0.iter().any(|(s, _)| matches!(s, Sym::Alpha(i) if zeros.contains(i))))
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    /// Numeric value given a value for every atom.
    pub fn eval(&self, value: &dyn Fn(&Sym) -> Option<f64>) -> Result<f64> {
        let mut acc = 0.0;
        for (m, c) in &self.terms {
            let mut t = c.to_f64().unwrap_or(f64::NAN);
            for (s, p) in &m.0 {
                let v = value(s).ok_or_else(|| Error::InvalidParameter(format!("no value for {s}")))?;
                t *= v.powi(*p as i32);
            }
            acc += t;
        }
        Ok(acc)
    }

    /// Numeric value with parameters only; α atoms are an error.
    pub fn eval_params(&self, params: &BTreeMap<String, f64>) -> Result<f64> {
        self.eval(&|s| match s {
            Sym::Param(p) => params.get(p).copied(),
            Sym::Alpha(_) => None,
        })
    }

    /// Evaluates the parameters and groups the result by α monomial, each given
    /// as (index, power) pairs with an f64 weight.
    pub fn alpha_terms(&self, params: &BTreeMap<String, f64>) -> Result<Vec<(Vec<(u32, u32)>, f64)>> {
        let mut grouped: BTreeMap<Monomial, CoeffPoly> = BTreeMap::new();
        for (m, c) in &self.terms {
            let (a, p) = m.split();
            let mut pc = CoeffPoly::zero();
            pc.add_term(p, c.clone());
            let e = grouped.entry(a).or_default();
            *e = &*e + &pc;
        }
        let mut out = Vec::new();
        for (a, pc) in grouped {
            let w = pc.eval_params(params)?;
            let idx = a
                .0
                .iter()
                .map(|(s, p)| match s {
                    Sym::Alpha(i) => (*i, *p),
                    Sym::Param(_) => unreachable!("split keeps only α atoms"),
                })
                .collect();
            out.push((idx, w));
        }
        Ok(out)
    }
}

impl Add for &CoeffPoly {
    type Output = CoeffPoly;
    fn add(self, rhs: &CoeffPoly) -> CoeffPoly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Sub for &CoeffPoly {
    type Output = CoeffPoly;
    fn sub(self, rhs: &CoeffPoly) -> CoeffPoly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl Mul for &CoeffPoly {
    type Output = CoeffPoly;
    fn mul(self, rhs: &CoeffPoly) -> CoeffPoly {
        let mut out = CoeffPoly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &rhs.terms {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }
}

impl Neg for &CoeffPoly {
    type Output = CoeffPoly;
    fn neg(self) -> CoeffPoly {
        self.scale(&-BigRational::one())
    }
}

macro_rules! owned_ops {
    ($($tr:ident $f:ident),*) => {$(
        impl $tr for CoeffPoly {
            type Output = CoeffPoly;
            fn $f(self, rhs: CoeffPoly) -> CoeffPoly {
                (&self).$f(&rhs)
            }
        }
    )*};
}
owned_ops!(Add add, Sub sub, Mul mul);

fn fmt_rational(c: &BigRational) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

fn push_sign(f: &mut String, first: bool, neg: bool) {
    if first {
        if neg {
            f.push('-');
        }
    } else {
        f.push_str(if neg { " - " } else { " + " });
    }
}

/// One signed term c·m.
fn fmt_term(f: &mut String, first: bool, c: &BigRational, m: &Monomial) {
    push_sign(f, first, c.is_negative());
    let abs = c.abs();
    let show_num = !abs.is_one() || m.is_one();
    if show_num {
        f.push_str(&fmt_rational(&abs));
    }
    if show_num && m.0.iter().any(|(s, _)| matches!(s, Sym::Param(_))) {
        f.push('·');
    }
    f.push_str(&m.to_string());
}

impl fmt::Display for CoeffPoly {
    /// Groups terms by α monomial with parameter-polynomial coefficients;
    /// higher α degree first, the α-free terms last.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let mut groups: BTreeMap<Monomial, CoeffPoly> = BTreeMap::new();
        for (m, c) in &self.terms {
            let (a, p) = m.split();
            groups.entry(a).or_default().add_term(p, c.clone());
        }
        let mut keys: Vec<&Monomial> = groups.keys().collect();
        keys.sort_by_key(|k| (k.is_one(), std::cmp::Reverse(k.degree()), *k));
        let mut s = String::new();
        let mut first = true;
        for k in keys {
            let coef = &groups[k];
            if coef.terms.len() == 1 {
                let (pm, c) = coef.terms.iter().next().expect("one term");
                fmt_term(&mut s, first, c, &pm.mul(k));
            } else if k.is_one() {
                let mut ordered: Vec<(&Monomial, &BigRational)> = coef.terms.iter().collect();
                ordered.sort_by_key(|(m, _)| (m.is_one(), std::cmp::Reverse(m.degree())));
                for (m, c) in ordered {
                    fmt_term(&mut s, first, c, m);
                    first = false;
                }
            } else {
                if !first {
                    s.push_str(" + ");
                }
                s.push('(');
                s.push_str(&coef.to_string());
                s.push(')');
                s.push_str(&k.to_string());
            }
            first = false;
        }
        f.write_str(&s)
    }
}

/// Polynomial in x with [`CoeffPoly`] coefficients.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct XPoly {
    coeffs: BTreeMap<u32, CoeffPoly>,
}

impl XPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn monomial(deg: u32, c: CoeffPoly) -> Self {
        let mut p = Self::zero();
        p.add_at(deg, &c);
        p
    }

    pub fn add_at(&mut self, deg: u32, c: &CoeffPoly) {
        let e = self.coeffs.entry(deg).or_default();
        *e = &*e + c;
        if e.is_zero() {
            self.coeffs.remove(&deg);
        }
    }

    pub fn coeff(&self, deg: u32) -> CoeffPoly {
        self.coeffs.get(&deg).cloned().unwrap_or_default()
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (u32, &CoeffPoly)> {
        self.coeffs.iter().map(|(d, c)| (*d, c))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn min_degree(&self) -> Option<u32> {
        self.coeffs.keys().next().copied()
    }

    pub fn max_degree(&self) -> Option<u32> {
        self.coeffs.keys().next_back().copied()
    }

    pub fn truncate(&self, cap: u32) -> Self {
        XPoly { coeffs: self.coeffs.range(..=cap).map(|(d, c)| (*d, c.clone())).collect() }
    }

    /// Terms of degree strictly above `q`.
    pub fn above(&self, q: u32) -> Self {
        XPoly { coeffs: self.coeffs.range(q + 1..).map(|(d, c)| (*d, c.clone())).collect() }
    }

    pub fn map(&self, f: impl Fn(&CoeffPoly) -> CoeffPoly) -> Self {
        let mut out = Self::zero();
        for (d, c) in &self.coeffs {
            out.add_at(*d, &f(c));
        }
        out
    }

    pub fn shift(&self, by: u32) -> Self {
        XPoly { coeffs: self.coeffs.iter().map(|(d, c)| (d + by, c.clone())).collect() }
    }

    pub fn mul_capped(&self, rhs: &XPoly, cap: u32) -> Self {
        let mut out = Self::zero();
        for (d1, c1) in &self.coeffs {
            for (d2, c2) in &rhs.coeffs {
                if d1 + d2 <= cap {
                    out.add_at(d1 + d2, &(c1 * c2));
                }
            }
        }
        out
    }
}

impl Add for &XPoly {
    type Output = XPoly;
    fn add(self, rhs: &XPoly) -> XPoly {
        let mut out = self.clone();
        for (d, c) in &rhs.coeffs {
            out.add_at(*d, c);
        }
        out
    }
}

impl Sub for &XPoly {
    type Output = XPoly;
    fn sub(self, rhs: &XPoly) -> XPoly {
        let mut out = self.clone();
        for (d, c) in &rhs.coeffs {
            out.add_at(*d, &-c);
        }
        out
    }
}

impl Mul for &XPoly {
    type Output = XPoly;
    fn mul(self, rhs: &XPoly) -> XPoly {
        self.mul_capped(rhs, u32::MAX)
    }
}

impl Neg for &XPoly {
    type Output = XPoly;
    fn neg(self) -> XPoly {
        self.map(|c| -c)
    }
}

impl fmt::Display for XPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let mut s = String::new();
        for (i, (d, c)) in self.coeffs.iter().enumerate() {
            let x = match d {
                0 => String::new(),
                1 => "x".to_string(),
                _ => format!("x{}", superscript(*d)),
            };
            if c.terms.len() == 1 {
                let (m, v) = c.terms.iter().next().expect("one term");
                if m.is_one() && v.abs().is_one() && *d > 0 {
                    push_sign(&mut s, i == 0, v.is_negative());
                } else {
                    fmt_term(&mut s, i == 0, v, m);
                    if *d > 0 {
                        s.push(' ');
                    }
                }
            } else {
                if i > 0 {
                    s.push_str(" + ");
                }
                s.push('(');
                s.push_str(&c.to_string());
                s.push_str(if *d > 0 { ") " } else { ")" });
            }
            s.push_str(&x);
        }
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ops::Mul;

    fn a(i: u32) -> CoeffPoly {
        CoeffPoly::alpha(i)
    }

    #[test]
    fn arithmetic_is_exact_and_canonical() {
        let p = &a(1) + &a(2);
        let q = &a(2) + &a(1);
        assert_eq!(p, q);
        let sq = &p * &p;
        let expect = &(&a(1).pow(2) + &a(1).mul(a(2)).scale(&rational(2, 1))) + &a(2).pow(2);
        assert_eq!(sq, expect);
        assert!((&sq - &expect).is_zero());
        let third = CoeffPoly::constant(rational(1, 3));
        assert_eq!((&third + &third) + third.clone(), CoeffPoly::one());
    }

    #[test]
    fn substitution_and_zeroing() {
        let p = &a(1).pow(2).mul(a(3)) + &a(2);
        let zeros: BTreeSet<u32> = [1].into_iter().collect();
        assert_eq!(p.zero_alphas(&zeros), a(2));
        let s = p.substitute(&|s| match s {
            Sym::Alpha(1) => Some(CoeffPoly::int(2)),
            _ => None,
        });
        assert_eq!(s, &a(3).scale(&rational(4, 1)) + &a(2));
    }

    #[test]
    fn display_groups_parameters() {
        let kappa = CoeffPoly::param("kappa");
        let lambda = CoeffPoly::param("lambda");
        let a_coef = &kappa - &lambda.scale(&rational(2, 1));
        let p = &(&a_coef * &a(2)) - &CoeffPoly::one();
        assert_eq!(p.to_string(), "(kappa - 2·lambda)α_2 - 1");
        let g = CoeffPoly::param("sigma").mul(a(2));
        assert_eq!(g.to_string(), "sigma·α_2");
        assert_eq!(a_coef.to_string(), "kappa - 2·lambda");
        let h = &(&a(2).pow(2).scale(&rational(-2, 1)) - &a(2).scale(&rational(2, 1))) + &CoeffPoly::zero();
        assert_eq!(h.to_string(), "-2α_2² - 2α_2");
        assert_eq!(CoeffPoly::constant(rational(-1, 2)).to_string(), "-1/2");
    }

    #[test]
    fn xpoly_display_and_degrees() {
        let m = &XPoly::monomial(6, a(2).mul(a(4)).scale(&rational(6, 1))) + &XPoly::monomial(8, a(4).pow(2).scale(&rational(4, 1)));
        assert_eq!(m.to_string(), "6α_2α_4 x⁶ + 4α_4² x⁸");
        assert_eq!(m.min_degree(), Some(6));
        assert_eq!(m.above(6).min_degree(), Some(8));
        assert_eq!(XPoly::zero().to_string(), "0");
        let l = XPoly::monomial(1, CoeffPoly::param("lambda"));
        assert_eq!(l.to_string(), "lambda x");
        let c = XPoly::monomial(3, &a(2) + &CoeffPoly::one());
        assert_eq!(c.to_string(), "(α_2 + 1) x³");
    }

    #[test]
    fn numeric_evaluation() {
        let p = &a(2).mul(CoeffPoly::param("s")) + &CoeffPoly::constant(rational(1, 4));
        let v = p
            .eval(&|s| match s {
                Sym::Alpha(2) => Some(3.0),
                Sym::Param(_) => Some(0.5),
                _ => None,
            })
            .unwrap();
        assert!((v - 1.75).abs() < 1e-15);
        assert!(p.eval_params(&BTreeMap::new()).is_err());
    }
}
