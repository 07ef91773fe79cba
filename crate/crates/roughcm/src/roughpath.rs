//! Grid-sampled γ-Hölder geometric rough paths.
//!
//! Only the second level over adjacent nodes is stored. The second level over
//! an arbitrary node pair is rebuilt from prefix sums with Chen's relation,
//! so Chen's identity holds by construction. All Hölder quantities are grid
//! seminorms: suprema over node pairs only.
//!
//! Index convention: `ww[a * d + b]` is ∫ W^a_{s,r} dW^b_r.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t0: f64,
    pub t1: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(t0: f64, t1: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("grid needs n >= 1".into()));
        }
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidParameter(format!("grid needs t0 < t1, got [{t0}, {t1}]")));
        }
        Ok(Grid { t0, t1, n })
    }

    /// Grid on [t0, t1] with `per_unit` cells per unit of time.
    pub fn per_unit(t0: f64, t1: f64, per_unit: usize) -> Result<Self> {
        let cells = ((t1 - t0) * per_unit as f64).round() as usize;
        Grid::new(t0, t1, cells)
    }

    pub fn h(&self) -> f64 {
        (self.t1 - self.t0) / self.n as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.n {
            self.t1
        } else {
            self.t0 + k as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.node(k)).collect()
    }

    /// Index of the node at time `t`, if `t` is grid-aligned.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t0) / self.h();
        let k = x.round();
        if (x - k).abs() > ALIGN_TOL || k < 0.0 || k > self.n as f64 {
            None
        } else {
            Some(k as usize)
        }
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.n == other.n
            && (self.t0 - other.t0).abs() <= ALIGN_TOL * self.h()
            && (self.t1 - other.t1).abs() <= ALIGN_TOL * self.h()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoughPath {
    gamma: f64,
    grid: Grid,
    d: usize,
    geometric: bool,
    w: Vec<f64>,
    cells: Vec<f64>,
    prefix: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    pub chen_defect_max: f64,
    pub geometry_defect_max: f64,
    /// Cell carrying the largest geometry defect.
    pub geometry_worst_cell: usize,
    pub holder_norm_1: f64,
    pub holder_norm_2: f64,
}

#[derive(Serialize, Deserialize)]
struct RoughPathDoc {
    gamma: f64,
    t0: f64,
    t1: f64,
    n: usize,
    d: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "WW")]
    ww: Vec<Vec<Vec<f64>>>,
    geometric: bool,
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 1.0 / 3.0 && gamma <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("gamma must lie in (1/3, 1/2], got {gamma}")))
    }
}

impl RoughPath {
    /// Builds a rough path from node values (`(n+1)·d`, row per node) and
    /// per-cell second levels (`n·d·d`).
    pub fn from_parts(
        gamma: f64,
        grid: Grid,
        d: usize,
        w: Vec<f64>,
        cells: Vec<f64>,
        geometric: bool,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        if d == 0 {
            return Err(Error::InvalidParameter("rough path needs d >= 1".into()));
        }
        if w.len() != (grid.n + 1) * d || cells.len() != grid.n * d * d {
            return Err(Error::Dimension(format!(
                "expected {} node values and {} cell values, got {} and {}",
                (grid.n + 1) * d,
                grid.n * d * d,
                w.len(),
                cells.len()
            )));
        }
        let mut rp = RoughPath { gamma, grid, d, geometric, w, cells, prefix: Vec::new() };
        rp.rebuild_prefix();
        Ok(rp)
    }

    fn rebuild_prefix(&mut self) {
        let (n, d) = (self.grid.n, self.d);
        let dd = d * d;
        let mut prefix = vec![0.0; (n + 1) * dd];
        for k in 0..n {
            for a in 0..d {
                let wa = self.w[k * d + a] - self.w[a];
                for b in 0..d {
                    let db = self.w[(k + 1) * d + b] - self.w[k * d + b];
                    prefix[(k + 1) * dd + a * d + b] =
                        prefix[k * dd + a * d + b] + self.cells[k * dd + a * d + b] + wa * db;
                }
            }
        }
        self.prefix = prefix;
    }

    /// The zero rough path.
    pub fn zero(gamma: f64, grid: Grid, d: usize) -> Result<Self> {
        Self::from_parts(gamma, grid, d, vec![0.0; (grid.n + 1) * d], vec![0.0; grid.n * d * d], true)
    }

    /// Lift of a smooth path given by fine node samples; each target cell must
    /// contain at least 8 sample intervals. The second level is the composite
    /// trapezoid rule for ∫ W_{s,r} ⊗ dW_r, which coincides with the exact lift
    /// of the piecewise-linear interpolant and is therefore geometric.
    pub fn lift_smooth(samples: &[Vec<f64>], target: Grid, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let m = samples.len().saturating_sub(1);
        if m == 0 || m % target.n != 0 || m / target.n < 8 {
            return Err(Error::InvalidParameter(format!(
                "smooth lift needs a multiple of {} sample intervals with >= 8 per cell, got {m}",
                target.n
            )));
        }
        let d = samples[0].len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::Dimension("samples must share a positive dimension".into()));
        }
        let flat: Vec<f64> = samples.iter().flatten().copied().collect();
        let fine_grid = Grid::new(target.t0, target.t1, m)?;
        let fine = Self::piecewise_linear(gamma, fine_grid, d, flat)?;
        fine.coarsen(m / target.n)
    }

    /// Exact lift of the piecewise-linear interpolant of node values.
    pub fn piecewise_linear(gamma: f64, grid: Grid, d: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != (grid.n + 1) * d {
            return Err(Error::Dimension("node values do not match grid".into()));
        }
        let mut cells = vec![0.0; grid.n * d * d];
        for k in 0..grid.n {
            for a in 0..d {
                let da = w[(k + 1) * d + a] - w[k * d + a];
                for b in 0..d {
                    let db = w[(k + 1) * d + b] - w[k * d + b];
                    cells[k * d * d + a * d + b] = 0.5 * da * db;
                }
            }
        }
        Self::from_parts(gamma, grid, d, w, cells, true)
    }

    /// Stratonovich lift of a Brownian path. For d = 1 the second level is
    /// ½ΔW² per cell; for d > 1 the path is sampled on a grid refined by
    /// `refinement`, lifted piecewise-linearly and coarsened via Chen.
    pub fn lift_brownian(seed: u64, grid: Grid, d: usize, refinement: usize, gamma: f64) -> Result<Self> {
        if d == 0 || refinement == 0 {
            return Err(Error::InvalidParameter("Brownian lift needs d >= 1 and refinement >= 1".into()));
        }
        let r = if d == 1 { 1 } else { refinement };
        let fine = Grid::new(grid.t0, grid.t1, grid.n * r)?;
        let sd = fine.h().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![0.0; (fine.n + 1) * d];
        for k in 0..fine.n {
            for a in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                w[(k + 1) * d + a] = w[k * d + a] + sd * z;
            }
        }
        Self::piecewise_linear(gamma, fine, d, w)?.coarsen(r)
    }

    /// Fractional Brownian lift with the default Hölder exponent (H + 1/3)/2.
    pub fn lift_fbm(seed: u64, hurst: f64, grid: Grid, dyadic_level: u32) -> Result<Self> {
        FbmSampler::new(hurst, grid, dyadic_level)?.sample(seed)
    }

    /// Merges `factor` adjacent cells into one via Chen's relation.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.grid.n % factor != 0 {
            return Err(Error::InvalidParameter(format!(
                "cannot coarsen {} cells by {factor}",
                self.grid.n
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let d = self.d;
        let n = self.grid.n / factor;
        let grid = Grid::new(self.grid.t0, self.grid.t1, n)?;
        let mut w = Vec::with_capacity((n + 1) * d);
        for k in 0..=n {
            w.extend_from_slice(self.w_node(k * factor));
        }
        let mut cells = vec![0.0; n * d * d];
        for k in 0..n {
            let c = self.ww(k * factor, (k + 1) * factor);
            cells[k * d * d..(k + 1) * d * d].copy_from_slice(&c);
        }
        Self::from_parts(self.gamma, grid, d, w, cells, self.geometric)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_geometric(&self) -> bool {
        self.geometric
    }

    pub fn w_node(&self, k: usize) -> &[f64] {
        &self.w[k * self.d..(k + 1) * self.d]
    }

    /// Stored second level of cell k, i.e. over nodes (k, k+1).
    pub fn cell_ww(&self, k: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.cells[k * dd..(k + 1) * dd]
    }

    /// First-level increment W_{s,t} between nodes.
    pub fn inc(&self, s: usize, t: usize) -> Vec<f64> {
        (0..self.d).map(|a| self.w[t * self.d + a] - self.w[s * self.d + a]).collect()
    }

    /// Scalar increment for one-dimensional paths (channel 0 otherwise).
    #[inline]
    pub fn inc1(&self, s: usize, t: usize) -> f64 {
        self.w[t * self.d] - self.w[s * self.d]
    }

    /// Second level 𝕎_{s,t} between nodes s ≤ t, rebuilt via Chen.
    pub fn ww(&self, s: usize, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.d * self.d];
        self.ww_into(s, t, &mut out);
        out
    }

    pub fn ww_into(&self, s: usize, t: usize, out: &mut [f64]) {
        let d = self.d;
        let dd = d * d;
        for a in 0..d {
            let w0s = self.w[s * d + a] - self.w[a];
            for b in 0..d {
                let wst = self.w[t * d + b] - self.w[s * d + b];
                out[a * d + b] = self.prefix[t * dd + a * d + b] - self.prefix[s * dd + a * d + b] - w0s * wst;
            }
        }
    }

    /// Time shift Θ_τ: the result lives on [t0 − τ, t1 − τ] with
    /// Θ_τW_t = W_{t+τ} − W_τ and Θ_τ𝕎_{s,t} = 𝕎_{s+τ,t+τ}. τ must be a grid
    /// node of this path.
    pub fn shift(&self, tau: f64) -> Result<Self> {
        let k = self.grid.index_of(tau).ok_or_else(|| {
            let aligned = ((tau - self.grid.t0) / self.grid.h()).round() * self.grid.h() + self.grid.t0;
            if (aligned - tau).abs() > ALIGN_TOL * self.grid.h() {
                Error::InvalidParameter(format!("shift {tau} is not a multiple of the grid step"))
            } else {
                Error::NodeRange(format!("shift {tau} leaves the stored range [{}, {}]", self.grid.t0, self.grid.t1))
            }
        })?;
        let d = self.d;
        let base: Vec<f64> = self.w_node(k).to_vec();
        let w: Vec<f64> = self.w.chunks(d).flat_map(|row| row.iter().zip(&base).map(|(x, b)| x - b)).collect();
        let grid = Grid { t0: self.grid.t0 - tau, t1: self.grid.t1 - tau, n: self.grid.n };
        Self::from_parts(self.gamma, grid, d, w, self.cells.clone(), self.geometric)
    }

    /// Restriction to nodes `a..=b`.
    pub fn window(&self, a: usize, b: usize) -> Result<Self> {
        if a >= b || b > self.grid.n {
            return Err(Error::NodeRange(format!("window ({a}, {b}) outside 0..={}", self.grid.n)));
        }
        let d = self.d;
        let grid = Grid::new(self.grid.node(a), self.grid.node(b), b - a)?;
        let w = self.w[a * d..(b + 1) * d].to_vec();
        let cells = self.cells[a * d * d..b * d * d].to_vec();
        Self::from_parts(self.gamma, grid, d, w, cells, self.geometric)
    }

    /// Restriction to the time interval [s, t] (grid-aligned).
    pub fn window_time(&self, s: f64, t: f64) -> Result<Self> {
        let a = self.grid.index_of(s).ok_or_else(|| Error::NodeRange(format!("{s} is not a node")))?;
        let b = self.grid.index_of(t).ok_or_else(|| Error::NodeRange(format!("{t} is not a node")))?;
        self.window(a, b)
    }

    /// Glues `next`, which must start where this path ends, via Chen.
    pub fn concat(&self, next: &RoughPath) -> Result<Self> {
        let h = self.grid.h();
        if self.d != next.d
            || (next.grid.h() - h).abs() > ALIGN_TOL * h
            || (next.grid.t0 - self.grid.t1).abs() > ALIGN_TOL * h
            || self.gamma != next.gamma
        {
            return Err(Error::GridMismatch("concatenated paths must share d, gamma, step and meet end to start".into()));
        }
        let d = self.d;
        let off: Vec<f64> = (0..d).map(|a| self.w_node(self.grid.n)[a] - next.w_node(0)[a]).collect();
        let mut w = self.w.clone();
        for k in 1..=next.grid.n {
            w.extend(next.w_node(k).iter().zip(&off).map(|(x, o)| x + o));
        }
        let mut cells = self.cells.clone();
        cells.extend_from_slice(&next.cells);
        let grid = Grid::new(self.grid.t0, next.grid.t1, self.grid.n + next.grid.n)?;
        Self::from_parts(self.gamma, grid, d, w, cells, self.geometric && next.geometric)
    }

    /// Table of (k·h)^e for lags k = 0..=n.
    pub fn lag_powers(&self, e: f64) -> Vec<f64> {
        let h = self.grid.h();
        (0..=self.grid.n).map(|k| (k as f64 * h).powf(e)).collect()
    }

    /// Hölder seminorms (‖W‖_γ, ‖𝕎‖_{2γ}) over node pairs in `a..=b`.
    pub fn holder_norms_range(&self, a: usize, b: usize) -> (f64, f64) {
        let pg = self.lag_powers(self.gamma);
        let p2g = self.lag_powers(2.0 * self.gamma);
        let d = self.d;
        let mut ww = vec![0.0; d * d];
        let (mut h1, mut h2) = (0.0f64, 0.0f64);
        for s in a..b {
            for t in s + 1..=b {
                let n1 = (0..d)
                    .map(|c| (self.w[t * d + c] - self.w[s * d + c]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                self.ww_into(s, t, &mut ww);
                let n2 = ww.iter().map(|x| x * x).sum::<f64>().sqrt();
                h1 = h1.max(n1 / pg[t - s]);
                h2 = h2.max(n2 / p2g[t - s]);
            }
        }
        (h1, h2)
    }

    pub fn holder_norms(&self) -> (f64, f64) {
        self.holder_norms_range(0, self.grid.n)
    }

    pub fn sup_norm(&self) -> f64 {
        self.w
            .chunks(self.d)
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Chen defect over all node triples, geometry defect per cell and the
    /// two Hölder seminorms.
    pub fn validate(&self) -> ValidationReport {
        let (n, d) = (self.grid.n, self.d);
        let dd = d * d;
        let mut chen = 0.0f64;
        let mut folded = vec![0.0; (n + 1) * dd];
        let (mut su, mut ut) = (vec![0.0; dd], vec![0.0; dd]);
        for s in 0..n {
            for x in folded[s * dd..(s + 1) * dd].iter_mut() {
                *x = 0.0;
            }
            for t in s..n {
                for a in 0..d {
                    let wst = self.w[t * d + a] - self.w[s * d + a];
                    for b in 0..d {
                        let dw = self.w[(t + 1) * d + b] - self.w[t * d + b];
                        folded[(t + 1) * dd + a * d + b] =
                            folded[t * dd + a * d + b] + self.cells[t * dd + a * d + b] + wst * dw;
                    }
                }
            }
            for t in s + 2..=n {
                for u in s + 1..t {
                    self.ww_into(s, u, &mut su);
                    self.ww_into(u, t, &mut ut);
                    for a in 0..d {
                        let wsu = self.w[u * d + a] - self.w[s * d + a];
                        for b in 0..d {
                            let wut = self.w[t * d + b] - self.w[u * d + b];
                            let r = folded[t * dd + a * d + b] - su[a * d + b] - ut[a * d + b] - wsu * wut;
                            chen = chen.max(r.abs());
                        }
                    }
                }
            }
        }
        let (geometry_defect_max, geometry_worst_cell) = self.geometry_defect();
        let (holder_norm_1, holder_norm_2) = self.holder_norms();
        ValidationReport { chen_defect_max: chen, geometry_defect_max, geometry_worst_cell, holder_norm_1, holder_norm_2 }
    }

    /// Largest |Sym(𝕎_k) − ½ΔW⊗ΔW| over cells and the cell attaining it.
    pub fn geometry_defect(&self) -> (f64, usize) {
        let d = self.d;
        let mut best = (0.0f64, 0usize);
        for k in 0..self.grid.n {
            let c = self.cell_ww(k);
            let dw = self.inc(k, k + 1);
            let mut m = 0.0f64;
            for a in 0..d {
                for b in 0..d {
                    let sym = 0.5 * (c[a * d + b] + c[b * d + a]);
                    m = m.max((sym - 0.5 * dw[a] * dw[b]).abs());
                }
            }
            if m > best.0 {
                best = (m, k);
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        let d = self.d;
        let doc = RoughPathDoc {
            gamma: self.gamma,
            t0: self.grid.t0,
            t1: self.grid.t1,
            n: self.grid.n,
            d,
            w: self.w.chunks(d).map(|r| r.to_vec()).collect(),
            ww: self.cells.chunks(d * d).map(|c| c.chunks(d).map(|r| r.to_vec()).collect()).collect(),
            geometric: self.geometric,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: RoughPathDoc = serde_json::from_str(s)?;
        let grid = Grid::new(doc.t0, doc.t1, doc.n)?;
        let w: Vec<f64> = doc.w.into_iter().flatten().collect();
        let cells: Vec<f64> = doc.ww.into_iter().flatten().flatten().collect();
        Self::from_parts(doc.gamma, grid, doc.d, w, cells, doc.geometric)
    }

    /// Node samples as CSV with header `t,W1,…,Wd`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for a in 0..self.d {
            out.push_str(&format!(",W{}", a + 1));
        }
        out.push('\n');
        for k in 0..=self.grid.n {
            out.push_str(&format!("{}", self.grid.node(k)));
            for x in self.w_node(k) {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Rough path distance ρ_γ: the sum of the two Hölder quotients of the
/// differences, each maximized over node pairs.
pub fn distance(a: &RoughPath, b: &RoughPath) -> Result<f64> {
    if !a.grid.same_as(&b.grid) || a.d != b.d || a.gamma != b.gamma {
        return Err(Error::GridMismatch("distance needs identical grids, dimension and gamma".into()));
    }
    let pg = a.lag_powers(a.gamma);
    let p2g = a.lag_powers(2.0 * a.gamma);
    let (n, d) = (a.grid.n, a.d);
    let (mut wa, mut wb) = (vec![0.0; d * d], vec![0.0; d * d]);
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for s in 0..n {
        for t in s + 1..=n {
            let e1 = (0..d)
                .map(|c| {
                    let x = (a.w[t * d + c] - a.w[s * d + c]) - (b.w[t * d + c] - b.w[s * d + c]);
                    x * x
                })
                .sum::<f64>()
                .sqrt();
            a.ww_into(s, t, &mut wa);
            b.ww_into(s, t, &mut wb);
            let e2 = wa.iter().zip(&wb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            s1 = s1.max(e1 / pg[t - s]);
            s2 = s2.max(e2 / p2g[t - s]);
        }
    }
    Ok(s1 + s2)
}

/// Exact-covariance fractional Brownian motion sampler. The Cholesky factor of
/// the covariance at the dyadic fine nodes is computed once and reused.
#[derive(Debug, Clone)]
pub struct FbmSampler {
    hurst: f64,
    gamma: f64,
    grid: Grid,
    level: u32,
    chol: DMatrix<f64>,
}

impl FbmSampler {
    pub fn new(hurst: f64, grid: Grid, dyadic_level: u32) -> Result<Self> {
        Self::with_gamma(hurst, grid, dyadic_level, (hurst + 1.0 / 3.0) / 2.0)
    }

    pub fn with_gamma(hurst: f64, grid: Grid, dyadic_level: u32, gamma: f64) -> Result<Self> {
        if !(hurst > 1.0 / 3.0 && hurst <= 0.5) {
            return Err(Error::InvalidParameter(format!("Hurst index must lie in (1/3, 1/2], got {hurst}")));
        }
        check_gamma(gamma)?;
        if gamma >= hurst {
            return Err(Error::InvalidParameter(format!("gamma {gamma} must be below the Hurst index {hurst}")));
        }
        let m = grid.n << dyadic_level;
        let hf = (grid.t1 - grid.t0) / m as f64;
        let two_h = 2.0 * hurst;
        let cov = DMatrix::from_fn(m, m, |i, j| {
            let (s, t) = ((i + 1) as f64 * hf, (j + 1) as f64 * hf);
            0.5 * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h))
        });
        let chol = cov.cholesky().ok_or(Error::Covariance { nodes: m })?.l();
        Ok(FbmSampler { hurst, gamma, grid, level: dyadic_level, chol })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn sample(&self, seed: u64) -> Result<RoughPath> {
        let m = self.chol.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        let x = &self.chol * z;
        let mut w = Vec::with_capacity(m + 1);
        w.push(0.0);
        w.extend(x.iter().copied());
        let fine = Grid::new(self.grid.t0, self.grid.t1, m)?;
        RoughPath::piecewise_linear(self.gamma, fine, 1, w)?.coarsen(1 << self.level)
    }
}
