//! Coefficient equations for the center-manifold ansatz φ(x) = Σ α_i x^i.
//!
//! For dx = (A^c x + F^c(x,y))dt + G^c(x,y)dW, dy = (A^s y + F^s(x,y))dt +
//! G^s(x,y)dW with scalar x and y, invariance of y = φ(x) up to order q
//! amounts to
//!
//! dα_i = (A^{α_i} α_i + f_i)dt + g_i dW,   A^{α_i} = A^s − i·A^c,
//!
//! where f_i is the x^i coefficient of F^s(x,φ) − φ′(x)F^c(x,φ) and g_i the
//! x^i coefficient of G^s(x,φ) − φ′(x)G^c(x,φ). Everything above degree q is
//! left over in the residuals Mφ and M̃φ.

mod parse;
mod poly;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::controlled::Field;
use crate::error::{Error, Result};

pub use parse::{parse_expr, parse_rational};
pub use poly::{rational, CoeffPoly, Monomial, Sym, XPoly};

/// Polynomial in (x, y): exponent pair (i, j) ↦ coefficient of x^i y^j.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolyField {
    pub terms: BTreeMap<(u32, u32), CoeffPoly>,
}

impl PolyField {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (u32, u32, CoeffPoly)>) -> Self {
        let mut f = Self::zero();
        for (i, j, c) in terms {
            f.add(i, j, &c);
        }
        f
    }

    pub fn add(&mut self, i: u32, j: u32, c: &CoeffPoly) {
        let e = self.terms.entry((i, j)).or_default();
        *e = &*e + c;
        if e.is_zero() {
            self.terms.remove(&(i, j));
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest total degree i + j.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|(i, j)| i + j).max().unwrap_or(0)
    }

    pub fn y_degree(&self) -> u32 {
        self.terms.keys().map(|(_, j)| *j).max().unwrap_or(0)
    }

    /// Lowest total degree present.
    pub fn low_degree(&self) -> Option<u32> {
        self.terms.keys().map(|(i, j)| i + j).min()
    }

    /// P(x, Σ_{i=1}^q α_i x^i), expanded exactly and truncated above `cap`.
    pub fn substitute_ansatz(&self, q: u32, cap: u32) -> XPoly {
        let phi = ansatz(q);
        let jmax = self.y_degree();
        let mut powers = vec![XPoly::monomial(0, CoeffPoly::one())];
        for j in 1..=jmax {
            let next = powers[j as usize - 1].mul_capped(&phi, cap);
            powers.push(next);
        }
        let mut out = XPoly::zero();
        for ((i, j), c) in &self.terms {
            if *i > cap {
                continue;
            }
            let term = powers[*j as usize].truncate(cap - i).shift(*i).map(|p| p * c);
            out = &out + &term;
        }
        out
    }

    pub fn numeric(&self, params: &BTreeMap<String, f64>) -> Result<NumPoly> {
        let mut terms = Vec::new();
        for ((i, j), c) in &self.terms {
            if c.has_alpha() {
                return Err(Error::InvalidParameter(format!("field coefficient {c} refers to an ansatz coefficient")));
            }
            terms.push((*i, *j, c.eval_params(params)?));
        }
        Ok(NumPoly { terms })
    }
}

/// φ(x) = Σ_{i=1}^q α_i x^i.
pub fn ansatz(q: u32) -> XPoly {
    let mut p = XPoly::zero();
    for i in 1..=q {
        p.add_at(i, &CoeffPoly::alpha(i));
    }
    p
}

/// φ′(x) = Σ_{k=1}^q k α_k x^{k−1}.
pub fn ansatz_derivative(q: u32) -> XPoly {
    let mut p = XPoly::zero();
    for k in 1..=q {
        p.add_at(k - 1, &CoeffPoly::alpha(k).scale(&rational(k as i64, 1)));
    }
    p
}

/// Numeric polynomial in (x, y).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NumPoly {
    pub terms: Vec<(u32, u32, f64)>,
}

fn pw(x: f64, n: u32) -> f64 {
    x.powi(n as i32)
}

impl NumPoly {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms.iter().map(|&(i, j, c)| c * pw(x, i) * pw(y, j)).sum()
    }

    /// (∂_x, ∂_y).
    pub fn grad(&self, x: f64, y: f64) -> (f64, f64) {
        let mut g = (0.0, 0.0);
        for &(i, j, c) in &self.terms {
            if i > 0 {
                g.0 += c * i as f64 * pw(x, i - 1) * pw(y, j);
            }
            if j > 0 {
                g.1 += c * j as f64 * pw(x, i) * pw(y, j - 1);
            }
        }
        g
    }

    /// The homogeneous part of total degree `l`.
    pub fn homogeneous(&self, l: u32) -> NumPoly {
        NumPoly { terms: self.terms.iter().copied().filter(|&(i, j, _)| i + j == l).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.2 == 0.0)
    }

    pub fn low_degree(&self) -> Option<u32> {
        self.terms.iter().filter(|t| t.2 != 0.0).map(|&(i, j, _)| i + j).min()
    }
}

/// Numeric form of a [`System`] with all parameters evaluated.
#[derive(Clone, Debug)]
pub struct NumericSystem {
    pub ac: f64,
    pub as_: f64,
    pub fc: NumPoly,
    pub fs: NumPoly,
    pub gc: Vec<NumPoly>,
    pub gs: Vec<NumPoly>,
}

impl NumericSystem {
    pub fn noise_dim(&self) -> usize {
        self.gc.len()
    }

    /// Nonlinear drift (F^c, F^s) on the state (x, y).
    pub fn drift_field(&self) -> PlanarField {
        PlanarField { rows: vec![self.fc.clone(), self.fs.clone()], d: 1 }
    }

    /// Diffusion on (x, y) with output layout `[i*d + a]`, i ∈ {x, y}.
    pub fn diffusion_field(&self) -> PlanarField {
        let mut rows = self.gc.clone();
        rows.extend(self.gs.iter().cloned());
        PlanarField { rows, d: self.gc.len() }
    }

    /// Keeps only the homogeneous part of degree `l` of every field.
    pub fn leading(&self, l: u32) -> NumericSystem {
        NumericSystem {
            ac: self.ac,
            as_: self.as_,
            fc: self.fc.homogeneous(l),
            fs: self.fs.homogeneous(l),
            gc: self.gc.iter().map(|p| p.homogeneous(l)).collect(),
            gs: self.gs.iter().map(|p| p.homogeneous(l)).collect(),
        }
    }

    /// Common lowest degree of the nonlinear fields.
    pub fn leading_degree(&self) -> Option<u32> {
        std::iter::once(&self.fc)
            .chain(std::iter::once(&self.fs))
            .chain(self.gc.iter())
            .chain(self.gs.iter())
            .filter_map(|p| p.low_degree())
            .min()
    }
}

/// Stack of [`NumPoly`] rows as a [`Field`] on R².
#[derive(Clone, Debug)]
pub struct PlanarField {
    pub rows: Vec<NumPoly>,
    pub d: usize,
}

impl Field for PlanarField {
    fn dim_in(&self) -> usize {
        2
    }

    fn dim_out(&self) -> usize {
        self.rows.len()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.rows) {
            *o = p.eval(y[0], y[1]);
        }
    }

    fn jacobian(&self, y: &[f64], out: &mut [f64]) {
        for (r, p) in self.rows.iter().enumerate() {
            let (gx, gy) = p.grad(y[0], y[1]);
            out[r * 2] = gx;
            out[r * 2 + 1] = gy;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Num(f64),
    Expr(String),
}

impl Coef {
    pub fn to_poly(&self) -> Result<CoeffPoly> {
        match self {
            Coef::Num(x) => Ok(CoeffPoly::constant(parse_rational(&x.to_string())?)),
            Coef::Expr(s) => parse_expr(s),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermSpec {
    pub i: u32,
    pub j: u32,
    pub c: Coef,
}

fn default_gamma() -> f64 {
    0.45
}

fn default_noise_dim() -> usize {
    1
}

/// On-disk description of a planar polynomial system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub q: Option<u32>,
    #[serde(default = "default_noise_dim")]
    pub noise_dim: usize,
    #[serde(rename = "Ac")]
    pub ac: Coef,
    #[serde(rename = "As")]
    pub as_: Coef,
    #[serde(rename = "Fc", default)]
    pub fc: Vec<TermSpec>,
    #[serde(rename = "Fs", default)]
    pub fs: Vec<TermSpec>,
    #[serde(rename = "Gc", default)]
    pub gc: Vec<Vec<TermSpec>>,
    #[serde(rename = "Gs", default)]
    pub gs: Vec<Vec<TermSpec>>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub override_assumptions: bool,
}

impl SystemSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Parses all coefficients and checks the structural assumptions unless
    /// `override_assumptions` is set.
    pub fn build(&self) -> Result<System> {
        fn field(ts: &[TermSpec]) -> Result<PolyField> {
            let mut f = PolyField::zero();
            for t in ts {
                f.add(t.i, t.j, &t.c.to_poly()?);
            }
            Ok(f)
        }
        let d = self.noise_dim;
        let channels = |v: &[Vec<TermSpec>], name: &str| -> Result<Vec<PolyField>> {
            match v.len() {
                0 => Ok(vec![PolyField::zero(); d]),
                n if n == d => v.iter().map(|c| field(c)).collect(),
                n => Err(Error::Dimension(format!("{name} has {n} channels, noise_dim is {d}"))),
            }
        };
        if d == 0 {
            return Err(Error::InvalidParameter("noise_dim must be at least 1".into()));
        }
        let sys = System {
            gamma: self.gamma,
            q: self.q,
            ac: self.ac.to_poly()?,
            as_: self.as_.to_poly()?,
            fc: field(&self.fc)?,
            fs: field(&self.fs)?,
            gc: channels(&self.gc, "Gc")?,
            gs: channels(&self.gs, "Gs")?,
            params: self.params.clone(),
        };
        if !self.override_assumptions {
            sys.check_assumptions()?;
        }
        Ok(sys)
    }
}

/// Planar polynomial system with symbolic coefficients.
#[derive(Clone, Debug)]
pub struct System {
    pub gamma: f64,
    pub q: Option<u32>,
    pub ac: CoeffPoly,
    pub as_: CoeffPoly,
    pub fc: PolyField,
    pub fs: PolyField,
    pub gc: Vec<PolyField>,
    pub gs: Vec<PolyField>,
    pub params: BTreeMap<String, f64>,
}

impl System {
    pub fn noise_dim(&self) -> usize {
        self.gc.len()
    }

    /// F(0,0) = DF(0,0) = 0 and G(0,0) = DG(0,0) = D²G(0,0) = 0.
    pub fn check_assumptions(&self) -> Result<()> {
        let low = |f: &PolyField| f.low_degree().unwrap_or(u32::MAX);
        let fl = low(&self.fc).min(low(&self.fs));
        match fl {
            0 => return Err(Error::Assumption("F(0,0) ≠ 0, see Assumption (F)".into())),
            1 => return Err(Error::Assumption("DF(0,0) ≠ 0, see Assumption (F)".into())),
            _ => {}
        }
        let gl = self.gc.iter().chain(&self.gs).map(low).min().unwrap_or(u32::MAX);
        match gl {
            0 => Err(Error::Assumption("G(0,0) ≠ 0, see Assumption (G)".into())),
            1 => Err(Error::Assumption("DG(0,0) ≠ 0, see Assumption (G)".into())),
            2 => Err(Error::Assumption("D²G(0,0) ≠ 0, see Assumption (G)".into())),
            _ => Ok(()),
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn numeric(&self) -> Result<NumericSystem> {
        let p = &self.params;
        Ok(NumericSystem {
            ac: self.ac.eval_params(p)?,
            as_: self.as_.eval_params(p)?,
            fc: self.fc.numeric(p)?,
            fs: self.fs.numeric(p)?,
            gc: self.gc.iter().map(|f| f.numeric(p)).collect::<Result<_>>()?,
            gs: self.gs.iter().map(|f| f.numeric(p)).collect::<Result<_>>()?,
        })
    }

    /// Largest total degree over all nonlinear fields.
    pub fn field_degree(&self) -> u32 {
        std::iter::once(&self.fc)
            .chain(std::iter::once(&self.fs))
            .chain(&self.gc)
            .chain(&self.gs)
            .map(PolyField::degree)
            .max()
            .unwrap_or(0)
    }
}

/// One coefficient equation dα_i = (A^{α_i}α_i + f_i)dt + Σ_a g_i^a dW^a.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderEquation {
    pub i: u32,
    pub a_alpha: CoeffPoly,
    pub f: CoeffPoly,
    pub g: Vec<CoeffPoly>,
    pub zero_flag: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoefficientSystem {
    pub q: u32,
    pub orders: Vec<OrderEquation>,
    /// F^s(x,φ) − φ′F^c(x,φ), untruncated.
    pub drift_expansion: XPoly,
    /// G^s(x,φ) − φ′G^c(x,φ) per channel, untruncated.
    pub diffusion_expansion: Vec<XPoly>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Residuals {
    pub m: XPoly,
    pub mtilde: Vec<XPoly>,
}

impl Residuals {
    pub fn min_degree_m(&self) -> Option<u32> {
        self.m.min_degree()
    }

    pub fn min_degree_mtilde(&self) -> Option<u32> {
        self.mtilde.iter().filter_map(XPoly::min_degree).min()
    }

    /// `Mφ = …; M̃φ = …`
    pub fn line(&self) -> String {
        let mt = if self.mtilde.len() == 1 {
            format!("M̃φ = {}", self.mtilde[0])
        } else {
            self.mtilde.iter().enumerate().map(|(a, p)| format!("M̃_{}φ = {p}", a + 1)).collect::<Vec<_>>().join("; ")
        };
        format!("Mφ = {}; {mt}", self.m)
    }
}

fn expansion(s: &PolyField, c: &PolyField, q: u32) -> XPoly {
    let cap = u32::MAX / 2;
    let ss = s.substitute_ansatz(q, cap);
    let cc = c.substitute_ansatz(q, cap);
    &ss - &(&ansatz_derivative(q) * &cc)
}

/// Coefficient matching up to order q (before zero propagation).
pub fn derive_system(sys: &System, q: u32) -> Result<CoefficientSystem> {
    if q < 2 {
        return Err(Error::InvalidParameter(format!("q must be at least 2, got {q}")));
    }
    let drift = expansion(&sys.fs, &sys.fc, q);
    let diff: Vec<XPoly> = sys.gs.iter().zip(&sys.gc).map(|(s, c)| expansion(s, c, q)).collect();
    let orders = (1..=q)
        .map(|i| OrderEquation {
            i,
            a_alpha: &sys.as_ - &sys.ac.scale(&rational(i as i64, 1)),
            f: drift.coeff(i),
            g: diff.iter().map(|p| p.coeff(i)).collect(),
            zero_flag: false,
        })
        .collect();
    Ok(CoefficientSystem { q, orders, drift_expansion: drift, diffusion_expansion: diff })
}

impl CoefficientSystem {
    pub fn order(&self, i: u32) -> &OrderEquation {
        &self.orders[i as usize - 1]
    }

    pub fn zero_flags(&self) -> BTreeSet<u32> {
        self.orders.iter().filter(|o| o.zero_flag).map(|o| o.i).collect()
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusion_expansion.len()
    }

    /// Flags α_i ≡ 0 whenever f_i and every g_i vanish once α_i and the
    /// atoms flagged so far are set to zero, then removes flagged atoms
    /// everywhere.
    pub fn propagate_zeros(&self) -> CoefficientSystem {
        let mut zeros: BTreeSet<u32> = BTreeSet::new();
        for o in &self.orders {
            let mut z = zeros.clone();
            z.insert(o.i);
            if o.f.zero_alphas(&z).is_zero() && o.g.iter().all(|g| g.zero_alphas(&z).is_zero()) {
                zeros.insert(o.i);
            }
        }
        let orders = self
            .orders
            .iter()
            .map(|o| OrderEquation {
                i: o.i,
                a_alpha: o.a_alpha.clone(),
                f: o.f.zero_alphas(&zeros),
                g: o.g.iter().map(|g| g.zero_alphas(&zeros)).collect(),
                zero_flag: zeros.contains(&o.i),
            })
            .collect();
        CoefficientSystem {
            q: self.q,
            orders,
            drift_expansion: self.drift_expansion.map(|c| c.zero_alphas(&zeros)),
            diffusion_expansion: self.diffusion_expansion.iter().map(|p| p.map(|c| c.zero_alphas(&zeros))).collect(),
        }
    }

    /// Mφ and M̃φ: the negated parts of degree > q of the expansions.
    pub fn residuals(&self) -> Residuals {
        let zeros = self.zero_flags();
        let part = |p: &XPoly| -&p.map(|c| c.zero_alphas(&zeros)).above(self.q);
        Residuals { m: part(&self.drift_expansion), mtilde: self.diffusion_expansion.iter().map(part).collect() }
    }

    /// `(A^{α_i}α_i + f_i)` as displayed in the report.
    pub fn drift_string(&self, i: u32) -> String {
        let o = self.order(i);
        let lin = &o.a_alpha * &CoeffPoly::alpha(i);
        match (lin.is_zero(), o.f.is_zero()) {
            (true, _) => o.f.to_string(),
            (false, true) => lin.to_string(),
            (false, false) => {
                let f = o.f.to_string();
                match f.strip_prefix('-') {
                    Some(rest) => format!("{lin} - {rest}"),
                    None => format!("{lin} + {f}"),
                }
            }
        }
    }

    /// `dα_i = …` for a surviving order, or `α_i ≡ 0` for a flagged one.
    pub fn equation_line(&self, i: u32) -> String {
        let o = self.order(i);
        if o.zero_flag {
            return format!("α_{i} ≡ 0");
        }
        let wrap = |s: String, multi: bool, unit: &str| if multi { format!("({s}){unit}") } else { format!("{s} {unit}") };
        let drift = self.drift_string(i);
        let multi = drift.trim_start_matches('-').contains([' ', '(']);
        let mut line = format!("dα_{i} = {}", wrap(drift.clone(), multi, "dt"));
        if drift == "0" {
            line = format!("dα_{i} = 0");
        }
        let d = o.g.len();
        for (a, g) in o.g.iter().enumerate() {
            if g.is_zero() {
                continue;
            }
            let unit = if d == 1 { "∘dW".to_string() } else { format!("∘dW_{}", a + 1) };
            let s = g.to_string();
            let multi = s.trim_start_matches('-').contains(' ');
            let body = if multi { format!("({s}){unit}") } else { format!("{s}{unit}") };
            if line.ends_with("= 0") {
                line = format!("dα_{i} = {body}");
            } else if let Some(rest) = body.strip_prefix('-') {
                line.push_str(&format!(" - {rest}"));
            } else {
                line.push_str(&format!(" + {body}"));
            }
        }
        line
    }

    /// Human-readable report: zero flags, surviving equations, residuals.
    pub fn report(&self) -> String {
        let mut lines = Vec::new();
        let flags: Vec<String> = self.zero_flags().iter().map(|i| format!("α_{i} ≡ 0")).collect();
        if !flags.is_empty() {
            lines.push(flags.join(", "));
        }
        for o in &self.orders {
            if !o.zero_flag {
                lines.push(self.equation_line(o.i));
            }
        }
        let r = self.residuals();
        lines.push(r.line());
        let deg = |d: Option<u32>| d.map_or("none".to_string(), |d| d.to_string());
        lines.push(format!(
            "residual min degree: M {}, M̃ {}",
            deg(r.min_degree_m()),
            deg(r.min_degree_mtilde())
        ));
        lines.join("\n")
    }

    /// JSON export with stringified polynomials.
    pub fn to_json(&self) -> serde_json::Value {
        let r = self.residuals();
        json!({
            "q": self.q,
            "noise_dim": self.noise_dim(),
            "zero_flags": self.zero_flags(),
            "orders": self.orders.iter().map(|o| json!({
                "i": o.i,
                "A_alpha": o.a_alpha.to_string(),
                "f": o.f.to_string(),
                "g": o.g.iter().map(|g| g.to_string()).collect::<Vec<_>>(),
                "zero_flag": o.zero_flag,
                "equation": self.equation_line(o.i),
            })).collect::<Vec<_>>(),
            "M": r.m.to_string(),
            "Mtilde": r.mtilde.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
            "residual_min_degree": {"M": r.min_degree_m(), "Mtilde": r.min_degree_mtilde()},
        })
    }

    /// A^{α_i} with parameters evaluated.
    pub fn a_alpha_value(&self, i: u32, params: &BTreeMap<String, f64>) -> Result<f64> {
        self.order(i).a_alpha.eval_params(params)
    }
}
