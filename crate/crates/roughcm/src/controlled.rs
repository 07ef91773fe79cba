//! Controlled rough paths (Y, Y′): remainders, the D^{2γ}_W norm, sums,
//! products and composition with smooth maps.
//!
//! Y takes values in R^m and Y′ in R^{m×d}, stored row-major per node as
//! `yp[k·m·d + i·d + a]`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roughpath::RoughPath;

/// A C² map R^{dim_in} → R^{dim_out} with an evaluable Jacobian.
pub trait Field: Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval(&self, y: &[f64], out: &mut [f64]);
    /// Row-major `dim_out × dim_in` Jacobian.
    fn jacobian(&self, y: &[f64], out: &mut [f64]);
}

/// A [`Field`] assembled from closures.
pub struct FnField<E, J> {
    pub dim_in: usize,
    pub dim_out: usize,
    pub eval: E,
    pub jacobian: J,
}

impl<E, J> Field for FnField<E, J>
where
    E: Fn(&[f64], &mut [f64]) + Sync,
    J: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.dim_out
    }
    fn eval(&self, y: &[f64], out: &mut [f64]) {
        (self.eval)(y, out)
    }
    fn jacobian(&self, y: &[f64], out: &mut [f64]) {
        (self.jacobian)(y, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledPath {
    rp: Arc<RoughPath>,
    m: usize,
    y: Vec<f64>,
    yp: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct D2GNorm {
    pub sup_y: f64,
    pub sup_yp: f64,
    pub holder_yp: f64,
    pub holder_remainder: f64,
    pub total: f64,
}

impl D2GNorm {
    /// The seminorm ‖Y′‖_γ + ‖R‖_{2γ}, kept as a diagnostic.
    pub fn seminorm(&self) -> f64 {
        self.holder_yp + self.holder_remainder
    }
}

#[derive(Serialize, Deserialize)]
struct ControlledDoc {
    path: serde_json::Value,
    m: usize,
    #[serde(rename = "Y")]
    y: Vec<Vec<f64>>,
    #[serde(rename = "Yp")]
    yp: Vec<Vec<f64>>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl ControlledPath {
    pub fn new(rp: Arc<RoughPath>, m: usize, y: Vec<f64>, yp: Vec<f64>) -> Result<Self> {
        let nodes = rp.n() + 1;
        if m == 0 || y.len() != nodes * m || yp.len() != nodes * m * rp.d() {
            return Err(Error::Dimension(format!(
                "controlled path over {nodes} nodes with m={m}, d={} needs {} values and {} derivative values",
                rp.d(),
                nodes * m,
                nodes * m * rp.d()
            )));
        }
        Ok(ControlledPath { rp, m, y, yp })
    }

    pub fn zero(rp: Arc<RoughPath>, m: usize) -> Self {
        let nodes = rp.n() + 1;
        let d = rp.d();
        ControlledPath { rp, m, y: vec![0.0; nodes * m], yp: vec![0.0; nodes * m * d] }
    }

    /// Constant path with zero Gubinelli derivative.
    pub fn constant(rp: Arc<RoughPath>, c: &[f64]) -> Self {
        let nodes = rp.n() + 1;
        let d = rp.d();
        let m = c.len();
        ControlledPath { rp, m, y: c.repeat(nodes), yp: vec![0.0; nodes * m * d] }
    }

    /// The path controlled by itself: (W, Id).
    pub fn identity(rp: Arc<RoughPath>) -> Self {
        let d = rp.d();
        let nodes = rp.n() + 1;
        let y: Vec<f64> = (0..nodes).flat_map(|k| rp.w_node(k).to_vec()).collect();
        let mut yp = vec![0.0; nodes * d * d];
        for k in 0..nodes {
            for a in 0..d {
                yp[k * d * d + a * d + a] = 1.0;
            }
        }
        ControlledPath { rp, m: d, y, yp }
    }

    /// Builds Y and Y′ nodewise from a closure receiving (node index, time).
    pub fn from_fn<F>(rp: Arc<RoughPath>, m: usize, f: F) -> Self
    where
        F: Fn(usize, f64, &mut [f64], &mut [f64]),
    {
        let nodes = rp.n() + 1;
        let d = rp.d();
        let mut y = vec![0.0; nodes * m];
        let mut yp = vec![0.0; nodes * m * d];
        let grid = rp.grid();
        for k in 0..nodes {
            f(k, grid.node(k), &mut y[k * m..(k + 1) * m], &mut yp[k * m * d..(k + 1) * m * d]);
        }
        ControlledPath { rp, m, y, yp }
    }

    pub fn rough_path(&self) -> &Arc<RoughPath> {
        &self.rp
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn noise_dim(&self) -> usize {
        self.rp.d()
    }

    pub fn nodes(&self) -> usize {
        self.rp.n() + 1
    }

    pub fn y(&self, k: usize) -> &[f64] {
        &self.y[k * self.m..(k + 1) * self.m]
    }

    pub fn yp(&self, k: usize) -> &[f64] {
        let md = self.m * self.rp.d();
        &self.yp[k * md..(k + 1) * md]
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y
    }

    pub fn yp_values(&self) -> &[f64] {
        &self.yp
    }

    /// First component of Y at every node.
    pub fn scalar_values(&self) -> Vec<f64> {
        self.y.chunks(self.m).map(|r| r[0]).collect()
    }

    pub fn into_parts(self) -> (Arc<RoughPath>, usize, Vec<f64>, Vec<f64>) {
        (self.rp, self.m, self.y, self.yp)
    }

    /// R^Y_{s,t} = Y_t − Y_s − Y′_s W_{s,t}.
    pub fn remainder(&self, s: usize, t: usize) -> Result<Vec<f64>> {
        if s >= t || t > self.rp.n() {
            return Err(Error::NodeRange(format!("remainder needs s < t <= {}, got ({s}, {t})", self.rp.n())));
        }
        let mut out = vec![0.0; self.m];
        self.remainder_into(s, t, &self.rp.inc(s, t), &mut out);
        Ok(out)
    }

    fn remainder_into(&self, s: usize, t: usize, wst: &[f64], out: &mut [f64]) {
        let (m, d) = (self.m, self.rp.d());
        let yps = self.yp(s);
        for i in 0..m {
            let mut r = self.y[t * m + i] - self.y[s * m + i];
            for a in 0..d {
                r -= yps[i * d + a] * wst[a];
            }
            out[i] = r;
        }
    }

    /// D^{2γ}_W norm over the whole grid.
    pub fn norm_d2g(&self) -> D2GNorm {
        self.norm_d2g_range(0, self.rp.n())
    }

    /// D^{2γ}_W norm restricted to nodes `a..=b`, with Hölder quotients over
    /// node pairs inside the range.
    pub fn norm_d2g_range(&self, a: usize, b: usize) -> D2GNorm {
        let pg = lag_table(&self.rp, a, b, self.rp.gamma());
        let p2g = lag_table(&self.rp, a, b, 2.0 * self.rp.gamma());
        self.norm_with_tables(a, b, &pg, &p2g)
    }

    pub(crate) fn norm_with_tables(&self, a: usize, b: usize, pg: &[f64], p2g: &[f64]) -> D2GNorm {
        let (m, d) = (self.m, self.rp.d());
        let md = m * d;
        let mut sup_y = 0.0f64;
        let mut sup_yp = 0.0f64;
        for k in a..=b {
            sup_y = sup_y.max(norm(self.y(k)));
            sup_yp = sup_yp.max(norm(self.yp(k)));
        }
        let mut holder_yp = 0.0f64;
        let mut holder_rem = 0.0f64;
        if m == 1 && d == 1 {
            for s in a..b {
                let ys = self.y[s];
                let yps = self.yp[s];
                let ws = self.rp.w_node(s)[0];
                for t in s + 1..=b {
                    let lag = t - s;
                    let dyp = (self.yp[t] - yps).abs();
                    let r = (self.y[t] - ys - yps * (self.rp.w_node(t)[0] - ws)).abs();
                    holder_yp = holder_yp.max(dyp / pg[lag]);
                    holder_rem = holder_rem.max(r / p2g[lag]);
                }
            }
        } else {
            let mut wst = vec![0.0; d];
            let mut r = vec![0.0; m];
            for s in a..b {
                for t in s + 1..=b {
                    let lag = t - s;
                    for c in 0..d {
                        wst[c] = self.rp.w_node(t)[c] - self.rp.w_node(s)[c];
                    }
                    let dyp = (0..md)
                        .map(|j| (self.yp[t * md + j] - self.yp[s * md + j]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    self.remainder_into(s, t, &wst, &mut r);
                    holder_yp = holder_yp.max(dyp / pg[lag]);
                    holder_rem = holder_rem.max(norm(&r) / p2g[lag]);
                }
            }
        }
        D2GNorm {
            sup_y,
            sup_yp,
            holder_yp,
            holder_remainder: holder_rem,
            total: sup_y + sup_yp + holder_yp + holder_rem,
        }
    }

    fn check_compatible(&self, other: &ControlledPath) -> Result<()> {
        if !Arc::ptr_eq(&self.rp, &other.rp) && *self.rp != *other.rp {
            return Err(Error::GridMismatch("controlled paths refer to different rough paths".into()));
        }
        if self.m != other.m {
            return Err(Error::Dimension(format!("dimensions {} and {} differ", self.m, other.m)));
        }
        Ok(())
    }

    /// Restriction to nodes `a..=b`.
    pub fn window(&self, a: usize, b: usize) -> Result<Self> {
        let rp = Arc::new(self.rp.window(a, b)?);
        self.restrict(rp, a)
    }

    /// Reinterprets nodes `a..` on `rp`, which must be the matching window
    /// of this path's rough path.
    pub fn restrict(&self, rp: Arc<RoughPath>, a: usize) -> Result<Self> {
        let (m, d) = (self.m, self.rp.d());
        let b = a + rp.n();
        if rp.d() != d || b >= self.nodes() {
            return Err(Error::NodeRange(format!("window ({a}, {b}) outside 0..{}", self.nodes())));
        }
        Ok(ControlledPath {
            rp,
            m,
            y: self.y[a * m..(b + 1) * m].to_vec(),
            yp: self.yp[a * m * d..(b + 1) * m * d].to_vec(),
        })
    }

    /// (aY + bỸ, aY′ + bỸ′).
    pub fn add_scale(a: f64, cp1: &ControlledPath, b: f64, cp2: &ControlledPath) -> Result<Self> {
        cp1.check_compatible(cp2)?;
        let y = cp1.y.iter().zip(&cp2.y).map(|(u, v)| a * u + b * v).collect();
        let yp = cp1.yp.iter().zip(&cp2.yp).map(|(u, v)| a * u + b * v).collect();
        Ok(ControlledPath { rp: cp1.rp.clone(), m: cp1.m, y, yp })
    }

    pub fn scale(&self, a: f64) -> Self {
        ControlledPath {
            rp: self.rp.clone(),
            m: self.m,
            y: self.y.iter().map(|v| a * v).collect(),
            yp: self.yp.iter().map(|v| a * v).collect(),
        }
    }

    /// Product of scalar paths: (YỸ, Y′Ỹ + YỸ′).
    pub fn mul(cp1: &ControlledPath, cp2: &ControlledPath) -> Result<Self> {
        if cp1.m != 1 || cp2.m != 1 {
            return Err(Error::Dimension("mul needs scalar-valued factors".into()));
        }
        cp1.check_compatible(cp2)?;
        let d = cp1.rp.d();
        let nodes = cp1.nodes();
        let mut y = vec![0.0; nodes];
        let mut yp = vec![0.0; nodes * d];
        for k in 0..nodes {
            y[k] = cp1.y[k] * cp2.y[k];
            for a in 0..d {
                yp[k * d + a] = cp1.yp[k * d + a] * cp2.y[k] + cp1.y[k] * cp2.yp[k * d + a];
            }
        }
        Ok(ControlledPath { rp: cp1.rp.clone(), m: 1, y, yp })
    }

    /// (G(Y), DG(Y)·Y′).
    pub fn compose(g: &dyn Field, cp: &ControlledPath) -> Result<Self> {
        if g.dim_in() != cp.m {
            return Err(Error::Dimension(format!("map expects dimension {}, path has {}", g.dim_in(), cp.m)));
        }
        let (m, mo, d) = (cp.m, g.dim_out(), cp.rp.d());
        let nodes = cp.nodes();
        let mut y = vec![0.0; nodes * mo];
        let mut yp = vec![0.0; nodes * mo * d];
        let mut jac = vec![0.0; mo * m];
        for k in 0..nodes {
            let yk = cp.y(k);
            g.eval(yk, &mut y[k * mo..(k + 1) * mo]);
            g.jacobian(yk, &mut jac);
            if jac.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("derivative evaluation failed at node {k}")));
            }
            let ypk = cp.yp(k);
            for i in 0..mo {
                for a in 0..d {
                    let mut s = 0.0;
                    for j in 0..m {
                        s += jac[i * m + j] * ypk[j * d + a];
                    }
                    yp[k * mo * d + i * d + a] = s;
                }
            }
        }
        Ok(ControlledPath { rp: cp.rp.clone(), m: mo, y, yp })
    }

    /// Measured constant C in ‖YỸ‖ ≤ C(1 + ‖W‖_γ)²‖Y‖‖Ỹ‖.
    pub fn product_constant(cp1: &ControlledPath, cp2: &ControlledPath) -> Result<f64> {
        let prod = Self::mul(cp1, cp2)?;
        let (wg, _) = cp1.rp.holder_norms();
        let denom = (1.0 + wg).powi(2) * cp1.norm_d2g().total * cp2.norm_d2g().total;
        Ok(if denom > 0.0 { prod.norm_d2g().total / denom } else { 0.0 })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ControlledDoc {
            path: serde_json::from_str(&self.rp.to_json()?)?,
            m: self.m,
            y: self.y.chunks(self.m).map(|r| r.to_vec()).collect(),
            yp: self.yp.chunks(self.m * self.rp.d()).map(|r| r.to_vec()).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ControlledDoc = serde_json::from_str(s)?;
        let rp = RoughPath::from_json(&doc.path.to_string())?;
        Self::new(
            Arc::new(rp),
            doc.m,
            doc.y.into_iter().flatten().collect(),
            doc.yp.into_iter().flatten().collect(),
        )
    }
}

/// Lag powers (k·h)^e for k = 0..=b−a.
pub(crate) fn lag_table(rp: &RoughPath, a: usize, b: usize, e: f64) -> Vec<f64> {
    let h = rp.grid().h();
    (0..=(b - a)).map(|k| (k as f64 * h).powf(e)).collect()
}
