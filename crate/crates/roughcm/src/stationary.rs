//! Stationary solutions of the coefficient equations along a sampled rough
//! path on [−T, 0], obtained by starting from zero at −T and running the
//! mild-solution recursion forward. The discarded tail decays like e^{−δT}.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::controlled::ControlledPath;
use crate::error::{Error, Result};
use crate::gubinelli::{convolve_diffusion_path, Propagator};
use crate::invariance::{CoeffPoly, CoefficientSystem, Sym};
use crate::linalg::scalar;
use crate::rde::{solve_affine, DEFAULT_BLOWUP};
use crate::roughpath::RoughPath;

pub const DEFAULT_TAIL_TOL: f64 = 1e-4;

/// Horizon T with e^{−δT} ≤ `tail_tol`, and at least 10/δ.
pub fn default_horizon(delta: f64, tail_tol: f64) -> f64 {
    (10.0 / delta).max(-tail_tol.ln() / delta)
}

#[derive(Debug, Clone)]
pub struct Stationary {
    pub path: ControlledPath,
    /// Bound on the effect of truncating (−∞, −T] at the terminal node.
    pub tail_bound: f64,
}

impl Stationary {
    pub fn terminal(&self) -> f64 {
        let n = self.path.nodes() - 1;
        self.path.y(n)[0]
    }
}

fn horizon(rp: &RoughPath) -> f64 {
    let g = rp.grid();
    g.t1 - g.t0
}

fn rough_scale(rp: &RoughPath) -> f64 {
    let (w1, w2) = rp.holder_norms();
    1.0 + w1 + w2.sqrt()
}

/// z_t = ∫_{−T}^t e^{−(t−s)} dW_s for scalar noise.
pub fn ou_stationary(rp: Arc<RoughPath>) -> Result<Stationary> {
    if rp.d() != 1 {
        return Err(Error::Dimension(format!("OU process needs scalar noise, got d = {}", rp.d())));
    }
    let one = ControlledPath::constant(rp.clone(), &[1.0]);
    let path = convolve_diffusion_path(&scalar(-1.0), &one)?;
    let tail_bound = (-horizon(&rp)).exp() * rough_scale(&rp);
    Ok(Stationary { path, tail_bound })
}

/// Largest real part of the spectrum.
fn max_re(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// α(t) = ∫_{−T}^t e^{A(t−r)}f_r dr + ∫_{−T}^t e^{A(t−r)}g_r dW_r for an
/// exponentially stable A. `f` holds node values, `g` is the integrand
/// (`m·d` components).
pub fn stationary_affine(a: &DMatrix<f64>, f: &[f64], g: &ControlledPath, rp: Arc<RoughPath>) -> Result<Stationary> {
    let re = max_re(a);
    if re >= 0.0 {
        return Err(Error::NotStable { max_re: re });
    }
    let delta = -re;
    let m = a.nrows();
    let path = solve_affine(a, f, g, rp.clone(), &vec![0.0; m])?;
    let tail_bound =
        (-delta * horizon(&rp)).exp() * (sup(f) / delta + sup(g.y_values()) * rough_scale(&rp) / delta.sqrt());
    Ok(Stationary { path, tail_bound })
}

/// Scalar equation with noise linear in the unknown:
/// dα = (aα + f)dt + Σ_a (c_a α + r^a) dW^a, started from `y0`.
pub fn solve_linear_noise(
    a: f64,
    c: &[f64],
    f: &[f64],
    r: &ControlledPath,
    rp: Arc<RoughPath>,
    y0: f64,
) -> Result<ControlledPath> {
    let d = rp.d();
    let nodes = rp.n() + 1;
    if c.len() != d || f.len() != nodes || r.dim() != d || r.nodes() != nodes {
        return Err(Error::Dimension("solve_linear_noise: inconsistent inputs".into()));
    }
    let h = rp.grid().h();
    let prop = Propagator::new(&scalar(a), h)?;
    let (e, b) = (prop.exp[(0, 0)], prop.int[(0, 0)]);
    let mut y = vec![0.0; nodes];
    let mut yp = vec![0.0; nodes * d];
    y[0] = y0;
    let mut gk = vec![0.0; d];
    for k in 0..nodes {
        for ch in 0..d {
            gk[ch] = c[ch] * y[k] + r.y(k)[ch];
        }
        yp[k * d..(k + 1) * d].copy_from_slice(&gk);
        if k + 1 == nodes {
            break;
        }
        let (w0, w1, ww) = (rp.w_node(k), rp.w_node(k + 1), rp.cell_ww(k));
        let rpk = r.yp(k);
        let mut term = 0.0;
        for ch in 0..d {
            term += gk[ch] * (w1[ch] - w0[ch]);
            for bb in 0..d {
                let gp = c[ch] * gk[bb] + rpk[ch * d + bb];
                term += gp * ww[bb * d + ch];
            }
        }
        let next = e * y[k] + b * 0.5 * (f[k] + f[k + 1]) + b / h * term;
        if !next.is_finite() || next.abs() > DEFAULT_BLOWUP {
            return Err(Error::BlowUp { node: k + 1, value: next.abs(), bound: DEFAULT_BLOWUP });
        }
        y[k + 1] = next;
    }
    ControlledPath::new(rp, 1, y, yp)
}

/// Evaluates a coefficient polynomial pathwise with α_k ↦ `paths[k−1]`.
pub fn eval_path(
    poly: &CoeffPoly,
    params: &BTreeMap<String, f64>,
    paths: &[Option<ControlledPath>],
    rp: &Arc<RoughPath>,
) -> Result<ControlledPath> {
    let mut acc = ControlledPath::zero(rp.clone(), 1);
    for (mono, w) in poly.alpha_terms(params)? {
        let mut term = ControlledPath::constant(rp.clone(), &[w]);
        for (i, p) in mono {
            let base = paths
                .get(i as usize - 1)
                .and_then(|x| x.as_ref())
                .ok_or_else(|| Error::InvalidParameter(format!("α_{i} is needed before it is solved")))?;
            for _ in 0..p {
                term = ControlledPath::mul(&term, base)?;
            }
        }
        acc = ControlledPath::add_scale(1.0, &acc, 1.0, &term)?;
    }
    Ok(acc)
}

/// Splits `poly` = coef·α_i + rest with coef free of α atoms.
fn split_linear(poly: &CoeffPoly, i: u32) -> Result<(CoeffPoly, CoeffPoly)> {
    let rest = poly.substitute(&|s| (*s == Sym::Alpha(i)).then(CoeffPoly::zero));
    let lin = poly - &rest;
    let coef = lin.substitute(&|s| (*s == Sym::Alpha(i)).then(CoeffPoly::one));
    if coef.has_alpha() || &coef * &CoeffPoly::alpha(i) != lin {
        return Err(Error::InvalidParameter(format!("order {i} is nonlinear in α_{i}")));
    }
    Ok((coef, rest))
}

/// Interleaves scalar channel paths into one integrand with d components.
fn stack_channels(ch: &[ControlledPath], rp: &Arc<RoughPath>) -> Result<ControlledPath> {
    let d = ch.len();
    Ok(ControlledPath::from_fn(rp.clone(), d, |k, _, y, yp| {
        for (a, p) in ch.iter().enumerate() {
            y[a] = p.y(k)[0];
            yp[a * d..(a + 1) * d].copy_from_slice(p.yp(k));
        }
    }))
}

#[derive(Debug, Clone)]
pub struct HierarchySolution {
    pub q: u32,
    /// α_i paths, index i − 1.
    pub paths: Vec<ControlledPath>,
    /// α_i at the terminal node, index i − 1.
    pub alpha0: Vec<f64>,
    pub tail_bounds: Vec<f64>,
    /// D^{2γ} norms of the α paths, reported for the local regime.
    pub max_norms: Vec<f64>,
}

impl HierarchySolution {
    pub fn alpha(&self, i: u32) -> f64 {
        self.alpha0[i as usize - 1]
    }

    /// Columns t, α_2, …, α_q.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for i in 2..=self.q {
            let _ = write!(s, ",alpha_{i}");
        }
        s.push('\n');
        let rp = self.paths[0].rough_path();
        let grid = rp.grid();
        for k in 0..=rp.n() {
            let _ = write!(s, "{}", grid.node(k));
            for i in 2..=self.q as usize {
                let _ = write!(s, ",{}", self.paths[i - 1].y(k)[0]);
            }
            s.push('\n');
        }
        s
    }
}

/// Solves the coefficient equations in increasing order, substituting the
/// already solved α paths into f_i and g_i. Flagged orders are zero.
pub fn solve_hierarchy(
    cs: &CoefficientSystem,
    params: &BTreeMap<String, f64>,
    rp: Arc<RoughPath>,
) -> Result<HierarchySolution> {
    let d = rp.d();
    if cs.noise_dim() != d {
        return Err(Error::Dimension(format!("system has {} noise channels, rough path {d}", cs.noise_dim())));
    }
    let nodes = rp.n() + 1;
    let mut paths: Vec<Option<ControlledPath>> = vec![None; cs.q as usize];
    let mut tails = vec![0.0; cs.q as usize];
    for o in &cs.orders {
        let idx = o.i as usize - 1;
        if o.zero_flag {
            paths[idx] = Some(ControlledPath::zero(rp.clone(), 1));
            continue;
        }
        let (fa, frest) = split_linear(&o.f, o.i)?;
        let a = o.a_alpha.eval_params(params)? + fa.eval_params(params)?;
        let f = eval_path(&frest, params, &paths, &rp)?.y_values().to_vec();
        let mut c = Vec::with_capacity(d);
        let mut rest = Vec::with_capacity(d);
        for g in &o.g {
            let (ga, grest) = split_linear(g, o.i)?;
            c.push(ga.eval_params(params)?);
            rest.push(eval_path(&grest, params, &paths, &rp)?);
        }
        let r = stack_channels(&rest, &rp)?;
        let st = if c.iter().all(|v| *v == 0.0) {
            stationary_affine(&scalar(a), &f, &r, rp.clone())?
        } else {
            if a >= 0.0 {
                return Err(Error::NotStable { max_re: a });
            }
            let path = solve_linear_noise(a, &c, &f, &r, rp.clone(), 0.0)?;
            let tail_bound = (a * horizon(&rp)).exp() * (sup(&f) / -a + sup(r.y_values()) * rough_scale(&rp));
            Stationary { path, tail_bound }
        };
        debug_assert_eq!(st.path.nodes(), nodes);
        tails[idx] = st.tail_bound;
        paths[idx] = Some(st.path);
    }
    let paths: Vec<ControlledPath> = paths.into_iter().map(|p| p.expect("every order solved")).collect();
    let alpha0 = paths.iter().map(|p| p.y(nodes - 1)[0]).collect();
    let max_norms = paths.iter().map(|p| p.norm_d2g().total).collect();
    Ok(HierarchySolution { q: cs.q, paths, alpha0, tail_bounds: tails, max_norms })
}

/// Evolves α(−s) forward over the last `s` time units with the same affine
/// data and returns |result − α(0)|.
pub fn stationarity_check(
    alpha: &ControlledPath,
    a: &DMatrix<f64>,
    f: &[f64],
    g: &ControlledPath,
    s: f64,
) -> Result<f64> {
    let rp = alpha.rough_path();
    let n = rp.n();
    let grid = rp.grid();
    let start = grid.index_of(grid.t1 - s).ok_or_else(|| Error::InvalidParameter(format!("horizon {s} is not grid-aligned")))?;
    if start >= n {
        return Err(Error::NodeRange(format!("horizon {s} is empty")));
    }
    let sub = Arc::new(rp.window(start, n)?);
    let m = alpha.dim();
    let g_sub = g.restrict(sub.clone(), start)?;
    let evolved = solve_affine(a, &f[start * m..], &g_sub, sub, alpha.y(start))?;
    let end = evolved.y(n - start);
    Ok(end.iter().zip(alpha.y(n)).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
}
