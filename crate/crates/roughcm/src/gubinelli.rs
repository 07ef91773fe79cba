//! Rough integrals as compound sums and the semigroup convolutions used in
//! mild solutions.
//!
//! An integrand for a d-dimensional rough path is a controlled path with
//! `m·d` components, read as an m×d matrix (row i, column a at `i·d + a`).
//! Its Gubinelli derivative entry for (i, a) and channel b sits at
//! `(i·d + a)·d + b`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::controlled::ControlledPath;
use crate::error::{Error, Result};
use crate::linalg::exp_and_integral;
use crate::roughpath::RoughPath;

fn integrand_rows(cp: &ControlledPath) -> Result<usize> {
    let d = cp.noise_dim();
    if cp.dim() % d != 0 {
        return Err(Error::Dimension(format!(
            "integrand dimension {} is not a multiple of the noise dimension {d}",
            cp.dim()
        )));
    }
    Ok(cp.dim() / d)
}

/// Y_u W_{u,v} + Y′_u 𝕎_{u,v} on cell k, accumulated into `out`.
pub(crate) fn cell_term(cp: &ControlledPath, k: usize, out: &mut [f64]) {
    let rp = cp.rough_path();
    let d = rp.d();
    let rows = out.len();
    let y = cp.y(k);
    let yp = cp.yp(k);
    let w0 = rp.w_node(k);
    let w1 = rp.w_node(k + 1);
    let ww = rp.cell_ww(k);
    for i in 0..rows {
        let mut s = 0.0;
        for a in 0..d {
            s += y[i * d + a] * (w1[a] - w0[a]);
            for b in 0..d {
                s += yp[(i * d + a) * d + b] * ww[b * d + a];
            }
        }
        out[i] = s;
    }
}

/// Compound sum Σ_{[u,v] ⊂ [s,t]} Y_u W_{u,v} + Y′_u 𝕎_{u,v}.
pub fn rough_integral(cp: &ControlledPath, s: usize, t: usize) -> Result<Vec<f64>> {
    let n = cp.rough_path().n();
    if s > t || t > n {
        return Err(Error::NodeRange(format!("integral over nodes ({s}, {t}) outside 0..={n}")));
    }
    let rows = integrand_rows(cp)?;
    let mut acc = vec![0.0; rows];
    let mut term = vec![0.0; rows];
    for k in s..t {
        cell_term(cp, k, &mut term);
        for (a, b) in acc.iter_mut().zip(&term) {
            *a += b;
        }
    }
    Ok(acc)
}

/// Running integral from node 0 as a controlled path whose Gubinelli
/// derivative is the integrand.
pub fn rough_integral_path(cp: &ControlledPath) -> Result<ControlledPath> {
    let rows = integrand_rows(cp)?;
    let nodes = cp.nodes();
    let mut y = vec![0.0; nodes * rows];
    let mut term = vec![0.0; rows];
    for k in 0..nodes - 1 {
        cell_term(cp, k, &mut term);
        for i in 0..rows {
            y[(k + 1) * rows + i] = y[k * rows + i] + term[i];
        }
    }
    ControlledPath::new(cp.rough_path().clone(), rows, y, cp.y_values().to_vec())
}

/// One-step propagator of the linear flow e^{At} on a uniform grid.
#[derive(Debug, Clone)]
pub struct Propagator {
    /// e^{Ah}
    pub exp: DMatrix<f64>,
    /// ∫_0^h e^{As} ds
    pub int: DMatrix<f64>,
    pub h: f64,
}

impl Propagator {
    pub fn new(a: &DMatrix<f64>, h: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension("generator must be square".into()));
        }
        let (exp, int) = exp_and_integral(a, h);
        if exp.iter().chain(int.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("matrix exponential failed".into()));
        }
        Ok(Propagator { exp, int, h })
    }

    /// Local drift contribution ∫_u^v e^{A(v−r)} f̄ dr with f̄ the cell mean.
    pub fn drift(&self, fu: &[f64], fv: &[f64]) -> DVector<f64> {
        let mean = DVector::from_iterator(fu.len(), fu.iter().zip(fv).map(|(a, b)| 0.5 * (a + b)));
        &self.int * mean
    }

    /// Local diffusion contribution: the cell average of e^{A(v−r)} applied
    /// to the compound-sum term.
    pub fn diffusion(&self, term: &[f64]) -> DVector<f64> {
        (&self.int / self.h) * DVector::from_column_slice(term)
    }
}

fn check_nodes(rp: &RoughPath, f: &[f64], m: usize) -> Result<()> {
    if f.len() != (rp.n() + 1) * m {
        return Err(Error::Dimension(format!("node path needs {} values, got {}", (rp.n() + 1) * m, f.len())));
    }
    Ok(())
}

/// t ↦ ∫_{t0}^t e^{A(t−r)} f_r dr with f frozen at its cell mean and the
/// exponential integrated exactly; the Gubinelli derivative is zero.
pub fn convolve_drift(a: &DMatrix<f64>, f: &[f64], rp: Arc<RoughPath>) -> Result<ControlledPath> {
    let m = a.nrows();
    check_nodes(&rp, f, m)?;
    let prop = Propagator::new(a, rp.grid().h())?;
    let nodes = rp.n() + 1;
    let mut y = vec![0.0; nodes * m];
    for k in 0..nodes - 1 {
        let prev = DVector::from_column_slice(&y[k * m..(k + 1) * m]);
        let next = &prop.exp * prev + prop.drift(&f[k * m..(k + 1) * m], &f[(k + 1) * m..(k + 2) * m]);
        y[(k + 1) * m..(k + 2) * m].copy_from_slice(next.as_slice());
    }
    let d = rp.d();
    ControlledPath::new(rp, m, y, vec![0.0; nodes * m * d])
}

/// ∫_{t0}^{t} e^{A(t−r)} G_r dW_r at node `t_node`, as a compound sum in
/// which each cell's semigroup factor is averaged over the cell.
pub fn convolve_diffusion(a: &DMatrix<f64>, cp: &ControlledPath, t_node: usize) -> Result<Vec<f64>> {
    let rows = integrand_rows(cp)?;
    if a.nrows() != rows {
        return Err(Error::Dimension(format!("generator of size {} for integrand with {rows} rows", a.nrows())));
    }
    let rp = cp.rough_path();
    if t_node > rp.n() {
        return Err(Error::NodeRange(format!("node {t_node} outside 0..={}", rp.n())));
    }
    let h = rp.grid().h();
    let prop = Propagator::new(a, h)?;
    let mut acc = DVector::<f64>::zeros(rows);
    let mut term = vec![0.0; rows];
    for k in 0..t_node {
        cell_term(cp, k, &mut term);
        let tail = crate::linalg::expm(a, (t_node - k - 1) as f64 * h);
        acc += tail * prop.diffusion(&term);
    }
    Ok(acc.as_slice().to_vec())
}

/// The full path t ↦ convolve_diffusion(A, cp, t) by forward recursion,
/// with Gubinelli derivative equal to the integrand.
pub fn convolve_diffusion_path(a: &DMatrix<f64>, cp: &ControlledPath) -> Result<ControlledPath> {
    let rows = integrand_rows(cp)?;
    if a.nrows() != rows {
        return Err(Error::Dimension(format!("generator of size {} for integrand with {rows} rows", a.nrows())));
    }
    let rp = cp.rough_path();
    let prop = Propagator::new(a, rp.grid().h())?;
    let nodes = cp.nodes();
    let mut y = vec![0.0; nodes * rows];
    let mut term = vec![0.0; rows];
    for k in 0..nodes - 1 {
        cell_term(cp, k, &mut term);
        let prev = DVector::from_column_slice(&y[k * rows..(k + 1) * rows]);
        let next = &prop.exp * prev + prop.diffusion(&term);
        y[(k + 1) * rows..(k + 2) * rows].copy_from_slice(next.as_slice());
    }
    ControlledPath::new(rp.clone(), rows, y, cp.y_values().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controlled::FnField;
    use crate::linalg::scalar;
    use crate::roughpath::Grid;

    fn linear(n: usize) -> Arc<RoughPath> {
        let samples: Vec<Vec<f64>> = (0..=8 * n).map(|k| vec![k as f64 / (8 * n) as f64]).collect();
        Arc::new(RoughPath::lift_smooth(&samples, Grid::new(0.0, 1.0, n).unwrap(), 0.5).unwrap())
    }

    fn brownian(seed: u64, n: usize) -> Arc<RoughPath> {
        Arc::new(RoughPath::lift_brownian(seed, Grid::new(0.0, 1.0, n).unwrap(), 1, 1, 0.45).unwrap())
    }

    #[test]
    fn constant_integrand_gives_increment() {
        let rp = brownian(1, 64);
        let cp = ControlledPath::constant(rp.clone(), &[3.0]);
        let v = rough_integral(&cp, 5, 50).unwrap()[0];
        assert!((v - 3.0 * rp.inc1(5, 50)).abs() < 1e-13);
    }

    #[test]
    fn w_dw_telescopes() {
        let rp = brownian(2, 256);
        let w = ControlledPath::identity(rp.clone());
        let v = rough_integral(&w, 0, 256).unwrap()[0];
        let w1 = rp.inc1(0, 256);
        assert!((v - 0.5 * w1 * w1).abs() < 1e-13);
    }

    #[test]
    fn sine_integral_converges_at_order_two() {
        let sine = FnField {
            dim_in: 1,
            dim_out: 1,
            eval: |y: &[f64], o: &mut [f64]| o[0] = y[0].sin(),
            jacobian: |y: &[f64], o: &mut [f64]| o[0] = y[0].cos(),
        };
        let exact = 1.0 - 1f64.cos();
        let errs: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&n| {
                let cp = ControlledPath::compose(&sine, &ControlledPath::identity(linear(n))).unwrap();
                (rough_integral(&cp, 0, n).unwrap()[0] - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
    }

    #[test]
    fn additivity_is_exact() {
        let rp = brownian(3, 128);
        let sq = ControlledPath::mul(&ControlledPath::identity(rp.clone()), &ControlledPath::identity(rp)).unwrap();
        let a = rough_integral(&sq, 0, 40).unwrap()[0];
        let b = rough_integral(&sq, 40, 128).unwrap()[0];
        let c = rough_integral(&sq, 0, 128).unwrap()[0];
        assert!((a + b - c).abs() < 1e-14);
    }

    #[test]
    fn chain_rule_for_polynomials() {
        let rp = brownian(4, 512);
        let w = ControlledPath::identity(rp.clone());
        // p(w) = 1 + w − 3w², P(w) = w + w²/2 − w³
        let p = FnField {
            dim_in: 1,
            dim_out: 1,
            eval: |y: &[f64], o: &mut [f64]| o[0] = 1.0 + y[0] - 3.0 * y[0] * y[0],
            jacobian: |y: &[f64], o: &mut [f64]| o[0] = 1.0 - 6.0 * y[0],
        };
        let cp = ControlledPath::compose(&p, &w).unwrap();
        let big_p = |x: f64| x + 0.5 * x * x - x * x * x;
        let v = rough_integral(&cp, 0, 512).unwrap()[0];
        let exact = big_p(rp.w_node(512)[0]) - big_p(rp.w_node(0)[0]);
        // the cubic primitive keeps a third-order Taylor term −Σ (ΔW)³ per cell
        let third: f64 = (0..512).map(|k| rp.inc1(k, k + 1).powi(3)).sum::<f64>();
        assert!((v - exact - third).abs() < 1e-8, "{}", v - exact);
    }

    #[test]
    fn chain_rule_for_affine_integrands() {
        let rp = brownian(14, 512);
        let w = ControlledPath::identity(rp.clone());
        let p = FnField {
            dim_in: 1,
            dim_out: 1,
            eval: |y: &[f64], o: &mut [f64]| o[0] = 0.5 - 2.0 * y[0],
            jacobian: |_: &[f64], o: &mut [f64]| o[0] = -2.0,
        };
        let cp = ControlledPath::compose(&p, &w).unwrap();
        let big_p = |x: f64| 0.5 * x - x * x;
        for (s, t) in [(0, 512), (100, 300)] {
            let v = rough_integral(&cp, s, t).unwrap()[0];
            assert!((v - (big_p(rp.w_node(t)[0]) - big_p(rp.w_node(s)[0]))).abs() < 1e-8);
        }
    }

    #[test]
    fn running_integral_cases() {
        let rp = brownian(5, 64);
        let zero = ControlledPath::zero(rp.clone(), 1);
        assert_eq!(rough_integral_path(&zero).unwrap().norm_d2g().total, 0.0);
        let one = ControlledPath::constant(rp.clone(), &[1.0]);
        let p = rough_integral_path(&one).unwrap();
        for k in 0..=64 {
            assert!((p.y(k)[0] - rp.inc1(0, k)).abs() < 1e-14);
            assert_eq!(p.yp(k)[0], 1.0);
        }
    }

    #[test]
    fn local_error_scales_like_three_gamma() {
        let fine = RoughPath::lift_brownian(6, Grid::new(0.0, 1.0, 4096).unwrap(), 1, 1, 0.45).unwrap();
        let gamma = fine.gamma();
        let mut ratios = Vec::new();
        for factor in [64usize, 32, 16] {
            let coarse = Arc::new(fine.coarsen(factor).unwrap());
            let fine_arc = Arc::new(fine.clone());
            let f_sq = ControlledPath::mul(&ControlledPath::identity(fine_arc.clone()), &ControlledPath::identity(fine_arc)).unwrap();
            let c_sq = ControlledPath::mul(&ControlledPath::identity(coarse.clone()), &ControlledPath::identity(coarse.clone())).unwrap();
            let h = coarse.grid().h();
            let mut worst = 0.0f64;
            for k in 0..coarse.n() {
                let a = rough_integral(&c_sq, k, k + 1).unwrap()[0];
                let b = rough_integral(&f_sq, k * factor, (k + 1) * factor).unwrap()[0];
                worst = worst.max((a - b).abs() / h.powf(3.0 * gamma));
            }
            ratios.push(worst);
        }
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(l, u), r| (l.min(*r), u.max(*r)));
        assert!(hi / lo < 10.0, "{ratios:?}");
    }

    #[test]
    fn drift_convolution_cases() {
        let rp = linear(256);
        let zero = convolve_drift(&scalar(-1.0), &vec![0.0; 257], rp.clone()).unwrap();
        assert_eq!(zero.norm_d2g().total, 0.0);
        let c = convolve_drift(&scalar(0.0), &vec![2.0; 257], rp.clone()).unwrap();
        for k in 0..=256 {
            assert!((c.y(k)[0] - 2.0 * rp.grid().node(k)).abs() < 1e-13);
        }
        let e = convolve_drift(&scalar(-1.0), &vec![1.0; 257], rp.clone()).unwrap();
        for k in 0..=256 {
            let t = rp.grid().node(k);
            assert!((e.y(k)[0] - (1.0 - (-t).exp())).abs() < 1e-6);
            assert_eq!(e.yp(k)[0], 0.0);
        }
    }

    #[test]
    fn diffusion_convolution_cases() {
        let rp = linear(256);
        let zero = ControlledPath::zero(rp.clone(), 1);
        assert_eq!(convolve_diffusion(&scalar(-1.0), &zero, 256).unwrap()[0], 0.0);
        let b = brownian(7, 128);
        let sq = ControlledPath::mul(&ControlledPath::identity(b.clone()), &ControlledPath::identity(b)).unwrap();
        let plain = rough_integral(&sq, 0, 100).unwrap()[0];
        assert!((convolve_diffusion(&scalar(0.0), &sq, 100).unwrap()[0] - plain).abs() < 1e-14);
        let one = ControlledPath::constant(rp, &[1.0]);
        let v = convolve_diffusion(&scalar(-1.0), &one, 256).unwrap()[0];
        assert!((v - (1.0 - (-1f64).exp())).abs() < 1e-6);
    }

    #[test]
    fn diffusion_path_matches_pointwise() {
        let rp = brownian(8, 64);
        let sq = ControlledPath::mul(&ControlledPath::identity(rp.clone()), &ControlledPath::identity(rp)).unwrap();
        let a = scalar(-0.7);
        let path = convolve_diffusion_path(&a, &sq).unwrap();
        for k in [0usize, 1, 17, 64] {
            assert!((path.y(k)[0] - convolve_diffusion(&a, &sq, k).unwrap()[0]).abs() < 1e-13);
        }
    }
}
