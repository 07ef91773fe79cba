//! Center-manifold approximations and the references they are checked
//! against: a discretized Lyapunov–Perron fixed point, the leading-order
//! approximation h^app and the deterministic coefficient-matching series.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::controlled::{lag_table, ControlledPath, Field};
use crate::error::{Error, Result};
use crate::gubinelli::Propagator;
use crate::invariance::{CoefficientSystem, NumericSystem, PlanarField, Sym, System, XPoly};
use crate::linalg::scalar;
use crate::rde::solve_affine;
use crate::roughpath::RoughPath;
use crate::stationary::HierarchySolution;

/// C¹ ramp: 1 on [0, ½], 0 on [1, ∞), cubic smoothstep in between.
pub fn cutoff_weight(u: f64) -> f64 {
    if u <= 0.5 {
        1.0
    } else if u >= 1.0 {
        0.0
    } else {
        let v = 2.0 * u - 1.0;
        1.0 - 3.0 * v * v + 2.0 * v * v * v
    }
}

/// χ_R applied to a whole path: scales it by ψ(‖cp‖_{D^{2γ}} / R).
pub fn cutoff_apply(cp: &ControlledPath, r: f64) -> Result<ControlledPath> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("cut-off radius must be positive, got {r}")));
    }
    Ok(cp.scale(cutoff_weight(cp.norm_d2g().total / r)))
}

/// φ(x) = Σ_{i=2}^q α_i(W) x^i at a fixed noise sample.
#[derive(Debug, Clone)]
pub struct ManifoldApproximation {
    pub q: u32,
    /// α_i at time 0, index i − 1.
    pub alpha0: Vec<f64>,
    pub seed: Option<u64>,
    pub horizon: f64,
    pub per_unit: usize,
    pub radius: f64,
}

impl ManifoldApproximation {
    pub fn from_hierarchy(sol: &HierarchySolution, seed: Option<u64>, radius: f64) -> Self {
        let rp = sol.paths[0].rough_path();
        let g = rp.grid();
        let horizon = g.t1 - g.t0;
        ManifoldApproximation {
            q: sol.q,
            alpha0: sol.alpha0.clone(),
            seed,
            horizon,
            per_unit: (rp.n() as f64 / horizon).round() as usize,
            radius,
        }
    }

    pub fn within_radius(&self, xi: f64) -> bool {
        xi.abs() <= self.radius
    }
}

pub fn evaluate_phi(ma: &ManifoldApproximation, xi: f64) -> f64 {
    (2..=ma.q as usize).map(|i| ma.alpha0[i - 1] * xi.powi(i as i32)).sum()
}

/// The center equation on the manifold:
/// dx = (A^c x + F^c(x, φ(x)))dt + G^c(x, φ(x))dW.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedFlow {
    pub drift: XPoly,
    pub diffusion: Vec<XPoly>,
}

impl ReducedFlow {
    /// Numeric coefficients (degree, value) for given α values (index i − 1).
    pub fn coefficients(&self, params: &BTreeMap<String, f64>, alpha: &[f64]) -> Result<(Vec<(u32, f64)>, Vec<Vec<(u32, f64)>>)> {
        let value = |s: &Sym| match s {
            Sym::Alpha(i) => alpha.get(*i as usize - 1).copied(),
            Sym::Param(p) => params.get(p).copied(),
        };
        let eval = |p: &XPoly| p.coeffs().map(|(d, c)| Ok((d, c.eval(&value)?))).collect::<Result<Vec<_>>>();
        Ok((eval(&self.drift)?, self.diffusion.iter().map(eval).collect::<Result<_>>()?))
    }
}

pub fn reduced_flow(sys: &System, cs: &CoefficientSystem) -> ReducedFlow {
    let zeros = cs.zero_flags();
    let cap = cs.q + sys.field_degree();
    let on_manifold = |f: &crate::invariance::PolyField| f.substitute_ansatz(cs.q, cap).map(|c| c.zero_alphas(&zeros));
    let mut drift = on_manifold(&sys.fc);
    drift.add_at(1, &sys.ac);
    ReducedFlow { drift, diffusion: sys.gc.iter().map(on_manifold).collect() }
}

/// Leading-order approximation: the stable convolution of F^s_l and G^s_l
/// along the linear center flow x̄_t = e^{A^c t}ξ over the window of `rp`.
pub fn leading_order_happ(ns: &NumericSystem, l: u32, xi: f64, rp: Arc<RoughPath>) -> Result<f64> {
    if ns.as_ >= 0.0 {
        return Err(Error::NotStable { max_re: ns.as_ });
    }
    let lead = ns.leading(l);
    let d = rp.d();
    if lead.gs.len() != d {
        return Err(Error::Dimension(format!("system has {} noise channels, rough path {d}", lead.gs.len())));
    }
    let grid = rp.grid();
    let xbar: Vec<f64> = (0..=rp.n()).map(|k| (ns.ac * (grid.node(k) - grid.t1)).exp() * xi).collect();
    let f: Vec<f64> = xbar.iter().map(|&x| lead.fs.eval(x, 0.0)).collect();
    let g = ControlledPath::from_fn(rp.clone(), d, |k, _, y, _| {
        for (a, gs) in lead.gs.iter().enumerate() {
            y[a] = gs.eval(xbar[k], 0.0);
        }
    });
    let y = solve_affine(&scalar(ns.as_), &f, &g, rp.clone(), &[0.0])?;
    Ok(y.y(rp.n())[0])
}

/// Deterministic coefficient matching: (A^s − iA^c)a_i + f_i(a_1, …) = 0
/// solved order by order with G ≡ 0.
pub fn carr_coefficients(cs: &CoefficientSystem, params: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    let mut a = vec![0.0; cs.q as usize];
    for o in &cs.orders {
        if o.zero_flag {
            continue;
        }
        let idx = o.i as usize - 1;
        let at = |v: f64, a: &[f64]| {
            o.f.eval(&|s| match s {
                Sym::Alpha(i) if *i == o.i => Some(v),
                Sym::Alpha(i) => a.get(*i as usize - 1).copied(),
                Sym::Param(p) => params.get(p).copied(),
            })
        };
        let r0 = at(0.0, &a)?;
        let lin = at(1.0, &a)? - r0;
        let coef = o.a_alpha.eval_params(params)? + lin;
        if coef == 0.0 {
            return Err(Error::NotStable { max_re: 0.0 });
        }
        a[idx] = -r0 / coef;
    }
    Ok(a)
}

pub fn series(coeffs: &[f64], xi: f64) -> f64 {
    coeffs.iter().enumerate().map(|(k, c)| c * xi.powi(k as i32 + 1)).sum()
}

#[derive(Debug, Clone, Copy)]
pub struct LPConfig {
    /// Weight exponent in (−β, 0); `None` picks −β/2.
    pub eta: Option<f64>,
    /// Window length N in time units.
    pub window: usize,
    pub cutoff_r: f64,
    pub max_iters: usize,
    pub fp_tol: f64,
}

impl Default for LPConfig {
    fn default() -> Self {
        LPConfig { eta: None, window: 12, cutoff_r: 0.5, max_iters: 200, fp_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct LPResult {
    pub hc: f64,
    pub iterations: usize,
    pub distances: Vec<f64>,
    /// Largest ratio of successive distances above the roundoff floor.
    pub contraction_rate: f64,
    pub converged: bool,
    /// e^{−βN}: decay of the discarded part of the infinite sums.
    pub tail_bound: f64,
    pub cutoff_active: bool,
    pub path: ControlledPath,
}

/// Discretized Lyapunov–Perron map on [−N, 0] for the planar system: the
/// stable part integrates forward from zero at −N, the center part backward
/// from ξ at 0, and every unit block is cut off by its own D^{2γ} norm.
pub struct LyapunovPerron<'a> {
    ns: &'a NumericSystem,
    rp: Arc<RoughPath>,
    cfg: LPConfig,
    eta: f64,
    per_unit: usize,
    center: Propagator,
    stable: Propagator,
    pg: Vec<f64>,
    p2g: Vec<f64>,
    drift: PlanarField,
    diffusion: PlanarField,
}

struct NodeEval {
    f: [f64; 2],
    g: Vec<f64>,
    gp: Vec<f64>,
}

impl<'a> LyapunovPerron<'a> {
    pub fn new(ns: &'a NumericSystem, rp: Arc<RoughPath>, cfg: LPConfig) -> Result<Self> {
        let beta = -ns.as_;
        if beta <= 0.0 {
            return Err(Error::NotStable { max_re: ns.as_ });
        }
        let eta = cfg.eta.unwrap_or(-beta / 2.0);
        if !(eta > -beta && eta < 0.0) {
            return Err(Error::InvalidParameter(format!("eta = {eta} must lie in (−β, 0) = ({}, 0)", -beta)));
        }
        if cfg.window < 2 {
            return Err(Error::InvalidParameter("window must be at least 2".into()));
        }
        if !(cfg.cutoff_r > 0.0) {
            return Err(Error::InvalidParameter("cutoff_r must be positive".into()));
        }
        let g = rp.grid();
        let big_n = cfg.window as f64;
        if (g.t1).abs() > 1e-12 || (g.t0 + big_n).abs() > 1e-9 || rp.n() % cfg.window != 0 {
            return Err(Error::GridMismatch(format!(
                "rough path must cover [−{}, 0] with a whole number of cells per unit",
                cfg.window
            )));
        }
        if rp.d() != ns.noise_dim() {
            return Err(Error::Dimension(format!("system has {} noise channels, rough path {}", ns.noise_dim(), rp.d())));
        }
        let per_unit = rp.n() / cfg.window;
        let h = g.h();
        let gamma = rp.gamma();
        Ok(LyapunovPerron {
            ns,
            pg: lag_table(&rp, 0, per_unit, gamma),
            p2g: lag_table(&rp, 0, per_unit, 2.0 * gamma),
            rp,
            cfg,
            eta,
            per_unit,
            center: Propagator::new(&scalar(ns.ac), h)?,
            stable: Propagator::new(&scalar(ns.as_), h)?,
            drift: ns.drift_field(),
            diffusion: ns.diffusion_field(),
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// x_t = e^{A^c t}ξ, y ≡ 0, zero Gubinelli derivative.
    pub fn initial(&self, xi: f64) -> ControlledPath {
        let ac = self.ns.ac;
        ControlledPath::from_fn(self.rp.clone(), 2, |_, t, y, _| {
            y[0] = (ac * t).exp() * xi;
            y[1] = 0.0;
        })
    }

    fn block_norm(&self, cp: &ControlledPath, j: usize) -> f64 {
        let n = self.per_unit;
        cp.norm_with_tables(j * n, (j + 1) * n, &self.pg, &self.p2g).total
    }

    fn eval_node(&self, u: &ControlledPath, k: usize, psi: f64) -> NodeEval {
        let d = self.rp.d();
        let z = [psi * u.y(k)[0], psi * u.y(k)[1]];
        let mut f = [0.0; 2];
        self.drift.eval(&z, &mut f);
        let mut g = vec![0.0; 2 * d];
        self.diffusion.eval(&z, &mut g);
        let mut jac = vec![0.0; 2 * d * 2];
        self.diffusion.jacobian(&z, &mut jac);
        let up = u.yp(k);
        let mut gp = vec![0.0; 2 * d * d];
        for r in 0..2 * d {
            for b in 0..d {
                gp[r * d + b] = (0..2).map(|j| jac[r * 2 + j] * psi * up[j * d + b]).sum();
            }
        }
        NodeEval { f, g, gp }
    }

    /// One application of the map; also reports whether any block was cut.
    pub fn apply(&self, u: &ControlledPath, xi: f64) -> Result<(ControlledPath, bool)> {
        let rp = &self.rp;
        let (d, nn, n) = (rp.d(), rp.n(), self.per_unit);
        let h = rp.grid().h();
        let psi: Vec<f64> = (0..self.cfg.window).map(|j| cutoff_weight(self.block_norm(u, j) / self.cfg.cutoff_r)).collect();
        let active = psi.iter().any(|p| *p < 1.0);
        let mut local = vec![[0.0f64; 2]; nn];
        let mut yp = vec![0.0; (nn + 1) * 2 * d];
        let mut left = self.eval_node(u, 0, psi[0]);
        for k in 0..nn {
            let pk = psi[k / n];
            if k > 0 && k % n == 0 {
                left = self.eval_node(u, k, pk);
            }
            yp[k * 2 * d..(k + 1) * 2 * d].copy_from_slice(&left.g);
            let right = self.eval_node(u, k + 1, pk);
            let (w0, w1, ww) = (rp.w_node(k), rp.w_node(k + 1), rp.cell_ww(k));
            for (i, prop) in [&self.center, &self.stable].into_iter().enumerate() {
                let mut term = 0.0;
                for a in 0..d {
                    term += left.g[i * d + a] * (w1[a] - w0[a]);
                    for b in 0..d {
                        term += left.gp[(i * d + a) * d + b] * ww[b * d + a];
                    }
                }
                let b_int = prop.int[(0, 0)];
                local[k][i] = b_int * 0.5 * (left.f[i] + right.f[i]) + b_int / h * term;
            }
            left = if (k + 1) % n == 0 { left } else { right };
        }
        let last = self.eval_node(u, nn, psi[self.cfg.window - 1]);
        yp[nn * 2 * d..].copy_from_slice(&last.g);
        let mut y = vec![0.0; (nn + 1) * 2];
        let es = self.stable.exp[(0, 0)];
        for k in 0..nn {
            y[(k + 1) * 2 + 1] = es * y[k * 2 + 1] + local[k][1];
        }
        let ec = self.center.exp[(0, 0)];
        y[nn * 2] = xi;
        for k in (0..nn).rev() {
            y[k * 2] = (y[(k + 1) * 2] - local[k][0]) / ec;
        }
        if let Some(k) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::BlowUp { node: k / 2, value: f64::INFINITY, bound: f64::MAX });
        }
        Ok((ControlledPath::new(rp.clone(), 2, y, yp)?, active))
    }

    /// sup_b e^{ηb} ‖u − v‖ on the block [−b, −b + 1].
    pub fn distance(&self, u: &ControlledPath, v: &ControlledPath) -> Result<f64> {
        let diff = ControlledPath::add_scale(1.0, u, -1.0, v)?;
        let big_n = self.cfg.window;
        Ok((0..big_n)
            .map(|j| (self.eta * (big_n - j) as f64).exp() * self.block_norm(&diff, j))
            .fold(0.0, f64::max))
    }

    pub fn run(&self, xi: f64) -> Result<LPResult> {
        let mut u = self.initial(xi);
        let mut distances = Vec::new();
        let mut converged = false;
        let mut cutoff_active = false;
        let mut streak = 0;
        let mut rate = 0.0f64;
        let h = self.rp.grid().h();
        for it in 1..=self.cfg.max_iters {
            let (v, active) = self.apply(&u, xi)?;
            cutoff_active = active;
            let dist = self.distance(&v, &u)?;
            let scale = 1.0 + v.y_values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let floor = 1e4 * f64::EPSILON * scale / h.powf(2.0 * self.rp.gamma());
            u = v;
            let prev = distances.last().copied();
            distances.push(dist);
            if dist < self.cfg.fp_tol {
                converged = true;
                break;
            }
            if let Some(p) = prev.filter(|p| *p > 0.0) {
                let ratio = dist / p;
                if dist > floor {
                    rate = rate.max(ratio);
                }
                streak = if ratio >= 1.0 { streak + 1 } else { 0 };
                if streak >= 5 {
                    if dist <= floor {
                        converged = true;
                        break;
                    }
                    return Err(Error::NonContraction { iteration: it, ratio });
                }
            }
        }
        let nn = self.rp.n();
        Ok(LPResult {
            hc: u.y(nn)[1],
            iterations: distances.len(),
            distances,
            contraction_rate: rate,
            converged,
            tail_bound: (self.ns.as_ * self.cfg.window as f64).exp(),
            cutoff_active,
            path: u,
        })
    }
}

pub fn lyapunov_perron_hc(ns: &NumericSystem, xi: f64, rp: Arc<RoughPath>, cfg: LPConfig) -> Result<LPResult> {
    LyapunovPerron::new(ns, rp, cfg)?.run(xi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub used: usize,
    /// Indices dropped for non-positive errors.
    pub excluded: Vec<usize>,
}

/// Least-squares slope of log(error) against log|ξ|.
pub fn order_fit(xis: &[f64], errors: &[f64]) -> Result<OrderFit> {
    if xis.len() != errors.len() {
        return Err(Error::Dimension("order_fit needs one error per ξ".into()));
    }
    let mut pts = Vec::new();
    let mut excluded = Vec::new();
    for (k, (x, e)) in xis.iter().zip(errors).enumerate() {
        if *e > 0.0 && e.is_finite() && *x != 0.0 {
            pts.push((x.abs().ln(), e.ln()));
        } else {
            excluded.push(k);
        }
    }
    if pts.len() < 2 {
        return Err(Error::InvalidParameter(format!("order_fit needs two usable points, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(OrderFit { slope, intercept: my - slope * mx, used: pts.len(), excluded })
}

/// ‖G(χ_R U) − G_l(χ_R U)‖ / ‖U‖^{l+1} in the D^{2γ} norm, where G_l is the
/// homogeneous degree-l part of G.
pub fn leading_order_defect(g: &dyn Field, g_l: &dyn Field, u: &ControlledPath, r: f64, l: u32) -> Result<f64> {
    let nu = u.norm_d2g().total;
    let z = cutoff_apply(u, r)?;
    let a = ControlledPath::compose(g, &z)?;
    let b = ControlledPath::compose(g_l, &z)?;
    let diff = ControlledPath::add_scale(1.0, &a, -1.0, &b)?;
    Ok(diff.norm_d2g().total / nu.powi(l as i32 + 1))
}
