//! End-to-end runs: derive the coefficient system, solve it along sampled
//! rough paths and compare φ against the Lyapunov–Perron reference.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::invariance::{derive_system, CoefficientSystem, NumericSystem, System};
use crate::manifold::{evaluate_phi, leading_order_happ, lyapunov_perron_hc, order_fit, LPConfig, ManifoldApproximation};
use crate::par::{self, Execution};
use crate::roughpath::{Grid, RoughPath};
use crate::spectral::{self, SpectralSplit};
use crate::stationary::solve_hierarchy;

/// Zero-propagated coefficient system for `q`, falling back to the spec's q.
pub fn derive(sys: &System, q: Option<u32>) -> Result<CoefficientSystem> {
    let q = q.or(sys.q).ok_or_else(|| Error::InvalidParameter("no order q given".into()))?;
    Ok(derive_system(sys, q)?.propagate_zeros())
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub q: Option<u32>,
    pub seeds: Vec<u64>,
    pub xi_min: f64,
    pub xi_max: f64,
    pub points: usize,
    /// Cells per unit time.
    pub per_unit: usize,
    /// Hierarchy horizon T; `None` uses the LP window.
    pub horizon: Option<usize>,
    /// Brownian substeps per cell for multi-channel lifts.
    pub refinement: usize,
    pub lp: LPConfig,
    pub execution: Execution,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            q: None,
            seeds: (0..20).collect(),
            xi_min: 0.0125,
            xi_max: 0.1,
            points: 4,
            per_unit: 256,
            horizon: None,
            refinement: 8,
            lp: LPConfig { fp_tol: 1e-15, ..LPConfig::default() },
            execution: Execution::default(),
        }
    }
}

impl VerifyConfig {
    /// Geometric sweep from `xi_max` down to `xi_min`.
    pub fn xi_sweep(&self) -> Vec<f64> {
        let r = (self.xi_min / self.xi_max).powf(1.0 / (self.points - 1) as f64);
        (0..self.points).map(|k| self.xi_max * r.powi(k as i32)).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.points < 4 {
            return Err(Error::InvalidParameter(format!("order fit needs at least 4 points, got {}", self.points)));
        }
        if !(self.xi_min > 0.0 && self.xi_max > self.xi_min) {
            return Err(Error::InvalidParameter(format!("need 0 < xi_min < xi_max, got {} and {}", self.xi_min, self.xi_max)));
        }
        if self.per_unit == 0 || self.refinement == 0 {
            return Err(Error::InvalidParameter("grid resolution must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    /// `None` for a noise-free system, which needs a single run.
    pub seed: Option<u64>,
    pub xi_sweep: Vec<f64>,
    pub phi_values: Vec<f64>,
    pub hc_values: Vec<f64>,
    pub happ_values: Vec<f64>,
    pub order_slope: Option<f64>,
    pub happ_slope: Option<f64>,
    /// max/min of |h^c − φ| / |ξ|^{q+1} over the sweep.
    pub ratio_spread: Option<f64>,
    pub contraction_rates: Vec<f64>,
    pub iterations: Vec<usize>,
    pub tail_bounds: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub alpha_max_norms: Vec<f64>,
    pub cutoff_active: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub q: u32,
    pub beta: f64,
    pub window: usize,
    pub horizon: usize,
    pub per_unit: usize,
    pub cutoff_r: f64,
    pub eta: f64,
    pub residual_min_degree: Option<u32>,
    pub threshold: f64,
    pub median_slope: Option<f64>,
    pub passed: bool,
    pub warnings: Vec<String>,
    pub seeds: Vec<SeedReport>,
}

impl VerifyReport {
    /// Rows (seed, xi, phi, hc, happ, abs_err_phi, abs_err_happ).
    pub fn csv_rows(&self) -> Vec<[String; 7]> {
        let mut rows = Vec::new();
        for s in &self.seeds {
            let seed = s.seed.map_or_else(String::new, |v| v.to_string());
            for k in 0..s.hc_values.len() {
                let (xi, phi, hc, happ) = (s.xi_sweep[k], s.phi_values[k], s.hc_values[k], s.happ_values[k]);
                rows.push([
                    seed.clone(),
                    xi.to_string(),
                    phi.to_string(),
                    hc.to_string(),
                    happ.to_string(),
                    (hc - phi).abs().to_string(),
                    (hc - happ).abs().to_string(),
                ]);
            }
        }
        rows
    }
}

pub const CSV_HEADER: [&str; 7] = ["seed", "xi", "phi", "hc", "happ", "abs_err_phi", "abs_err_happ"];

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn is_noise_free(ns: &NumericSystem) -> bool {
    ns.gc.iter().chain(&ns.gs).all(|g| g.is_zero())
}

struct Shared<'a> {
    ns: &'a NumericSystem,
    cs: &'a CoefficientSystem,
    sys: &'a System,
    cfg: &'a VerifyConfig,
    span: usize,
    horizon: usize,
    xis: Vec<f64>,
    lead: Option<u32>,
}

fn run_seed(sh: &Shared, seed: Option<u64>) -> SeedReport {
    let mut rep = SeedReport {
        seed,
        xi_sweep: sh.xis.clone(),
        phi_values: vec![],
        hc_values: vec![],
        happ_values: vec![],
        order_slope: None,
        happ_slope: None,
        ratio_spread: None,
        contraction_rates: vec![],
        iterations: vec![],
        tail_bounds: vec![],
        alpha0: vec![],
        alpha_max_norms: vec![],
        cutoff_active: false,
        error: None,
    };
    if let Err(e) = fill_seed(sh, seed, &mut rep) {
        rep.error = Some(e.to_string());
    }
    rep
}

fn fill_seed(sh: &Shared, seed: Option<u64>, rep: &mut SeedReport) -> Result<()> {
    let cfg = sh.cfg;
    let d = sh.ns.noise_dim();
    let grid = Grid::per_unit(-(sh.span as f64), 0.0, cfg.per_unit)?;
    let full = match seed {
        Some(s) => RoughPath::lift_brownian(s, grid, d, cfg.refinement, sh.sys.gamma)?,
        None => RoughPath::zero(sh.sys.gamma, grid, d)?,
    };
    let n = full.n();
    let tail = |units: usize| -> Result<Arc<RoughPath>> {
        Ok(Arc::new(full.window(n - units * cfg.per_unit, n)?))
    };
    let hier_rp = tail(sh.horizon)?;
    let lp_rp = tail(cfg.lp.window)?;
    let sol = solve_hierarchy(sh.cs, &sh.sys.params, hier_rp)?;
    let ma = ManifoldApproximation::from_hierarchy(&sol, seed, cfg.lp.cutoff_r);
    rep.alpha0 = sol.alpha0.clone();
    rep.alpha_max_norms = sol.max_norms.clone();
    for &xi in &sh.xis {
        let lp = lyapunov_perron_hc(sh.ns, xi, lp_rp.clone(), cfg.lp)?;
        let happ = match sh.lead {
            Some(l) => leading_order_happ(sh.ns, l, xi, lp_rp.clone())?,
            None => 0.0,
        };
        rep.phi_values.push(evaluate_phi(&ma, xi));
        rep.hc_values.push(lp.hc);
        rep.happ_values.push(happ);
        rep.contraction_rates.push(lp.contraction_rate);
        rep.iterations.push(lp.iterations);
        rep.tail_bounds.push(lp.tail_bound);
        rep.cutoff_active |= lp.cutoff_active;
    }
    let err_phi: Vec<f64> = rep.hc_values.iter().zip(&rep.phi_values).map(|(h, p)| (h - p).abs()).collect();
    let err_happ: Vec<f64> = rep.hc_values.iter().zip(&rep.happ_values).map(|(h, p)| (h - p).abs()).collect();
    rep.order_slope = order_fit(&sh.xis, &err_phi).ok().map(|f| f.slope);
    rep.happ_slope = order_fit(&sh.xis, &err_happ).ok().map(|f| f.slope);
    let q1 = sh.cs.q as i32 + 1;
    let ratios: Vec<f64> = err_phi.iter().zip(&sh.xis).map(|(e, x)| e / x.abs().powi(q1)).collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    rep.ratio_spread = (lo > 0.0).then(|| hi / lo);
    Ok(())
}

/// Order check of φ against the Lyapunov–Perron reference over seeds.
pub fn verify(sys: &System, cfg: &VerifyConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let cs = derive(sys, cfg.q)?;
    let ns = sys.numeric()?;
    let split: SpectralSplit = spectral::split(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![ns.ac, ns.as_])), spectral::DEFECT_TOL)?;
    if split.stable_dim == 0 {
        return Err(Error::NotStable { max_re: ns.as_ });
    }
    let horizon = cfg.horizon.unwrap_or(cfg.lp.window);
    let span = horizon.max(cfg.lp.window);
    let mut warnings = Vec::new();
    let xis = cfg.xi_sweep();
    for xi in &xis {
        if xi.abs() > cfg.lp.cutoff_r {
            warnings.push(format!("ξ = {xi} exceeds the cut-off radius R = {}", cfg.lp.cutoff_r));
        }
    }
    let deterministic = is_noise_free(&ns);
    let seeds: Vec<Option<u64>> = if deterministic { vec![None] } else { cfg.seeds.iter().map(|s| Some(*s)).collect() };
    let sh = Shared { ns: &ns, cs: &cs, sys, cfg, span, horizon, xis, lead: ns.leading_degree() };
    let reports = par::map_with(cfg.execution, &seeds, |s| run_seed(&sh, *s));
    for r in &reports {
        if r.cutoff_active {
            let label = r.seed.map_or_else(|| "deterministic run".to_string(), |v| format!("seed {v}"));
            warnings.push(format!("{label}: cut-off active, the path left the ball of radius R/2"));
        }
    }
    let slopes: Vec<f64> = reports.iter().filter_map(|r| r.order_slope).collect();
    let median_slope = median(slopes);
    let threshold = cs.q as f64 + 0.5;
    let failed = reports.iter().any(|r| r.error.is_some());
    let r = cs.residuals();
    let residual_min_degree = match (r.min_degree_m(), r.min_degree_mtilde()) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    Ok(VerifyReport {
        q: cs.q,
        beta: split.beta,
        window: cfg.lp.window,
        horizon,
        per_unit: cfg.per_unit,
        cutoff_r: cfg.lp.cutoff_r,
        eta: cfg.lp.eta.unwrap_or(ns.as_ / 2.0),
        residual_min_degree,
        threshold,
        median_slope,
        passed: !failed && median_slope.is_some_and(|m| m >= threshold),
        warnings,
        seeds: reports,
    })
}
