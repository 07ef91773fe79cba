//! Solvers for dY = (AY + F(Y))dt + G(Y)dW and for affine coefficient
//! equations dY = (AY + f_t)dt + g_t dW.
//!
//! The level-2 step treats the linear part exactly: on a cell [u, v]
//!
//! Y_v = e^{Ah}Y_u + Φ_h (F(Y_u) + ḡ_{u,v}),   ḡ = (G(Y_u)W_{u,v} + DG(Y_u)G(Y_u)𝕎_{u,v}) / h,
//!
//! with Φ_h = ∫_0^h e^{As}ds. For A = 0 this is the plain Davie step.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::controlled::{ControlledPath, Field};
use crate::error::{Error, Result};
use crate::gubinelli::{cell_term, Propagator};
use crate::roughpath::RoughPath;

pub const DEFAULT_BLOWUP: f64 = 1e6;

fn guard(y: &[f64], node: usize, bound: f64) -> Result<()> {
    let v = y.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !v.is_finite() || v > bound {
        return Err(Error::BlowUp { node, value: v, bound });
    }
    Ok(())
}

/// Level-2 solution of dY = (AY + F(Y))dt + G(Y)dW from `y0` at the first
/// node. The output carries the Gubinelli derivative Y′ = G(Y).
pub fn solve_rde(
    a: &DMatrix<f64>,
    f: &dyn Field,
    g: &dyn Field,
    rp: Arc<RoughPath>,
    y0: &[f64],
    bound: f64,
) -> Result<ControlledPath> {
    let m = y0.len();
    let d = rp.d();
    if a.nrows() != m || f.dim_in() != m || f.dim_out() != m || g.dim_in() != m || g.dim_out() != m * d {
        return Err(Error::Dimension(format!("solve_rde: state {m}, noise {d}: inconsistent field sizes")));
    }
    let h = rp.grid().h();
    let prop = Propagator::new(a, h)?;
    let nodes = rp.n() + 1;
    let mut y = vec![0.0; nodes * m];
    let mut yp = vec![0.0; nodes * m * d];
    y[..m].copy_from_slice(y0);
    guard(y0, 0, bound)?;
    let mut fv = vec![0.0; m];
    let mut jac = vec![0.0; m * d * m];
    let mut gk = vec![0.0; m * d];
    for k in 0..nodes {
        g.eval(&y[k * m..(k + 1) * m], &mut gk);
        yp[k * m * d..(k + 1) * m * d].copy_from_slice(&gk);
        if k + 1 == nodes {
            break;
        }
        let yk = DVector::from_column_slice(&y[k * m..(k + 1) * m]);
        f.eval(yk.as_slice(), &mut fv);
        g.jacobian(yk.as_slice(), &mut jac);
        let w0 = rp.w_node(k);
        let w1 = rp.w_node(k + 1);
        let ww = rp.cell_ww(k);
        let mut forcing = DVector::from_column_slice(&fv);
        for i in 0..m {
            let mut s = 0.0;
            for a_ in 0..d {
                s += gk[i * d + a_] * (w1[a_] - w0[a_]);
                for b in 0..d {
                    // ∂_W^b of G^{i a}(Y) is Σ_j ∂_j G^{i a} G^{j b}
                    let mut dgg = 0.0;
                    for j in 0..m {
                        dgg += jac[(i * d + a_) * m + j] * gk[j * d + b];
                    }
                    s += dgg * ww[b * d + a_];
                }
            }
            forcing[i] += s / h;
        }
        let next = &prop.exp * yk + &prop.int * forcing;
        guard(next.as_slice(), k + 1, bound)?;
        y[(k + 1) * m..(k + 2) * m].copy_from_slice(next.as_slice());
    }
    ControlledPath::new(rp, m, y, yp)
}

/// Variation of constants for dY = (AY + f)dt + g dW:
/// Y_t = e^{A(t−t0)}y0 + drift convolution + diffusion convolution, with
/// Gubinelli derivative g. `f` holds node values (`(n+1)·m`).
pub fn solve_affine(
    a: &DMatrix<f64>,
    f: &[f64],
    g: &ControlledPath,
    rp: Arc<RoughPath>,
    y0: &[f64],
) -> Result<ControlledPath> {
    let m = y0.len();
    let d = rp.d();
    let nodes = rp.n() + 1;
    if a.nrows() != m || f.len() != nodes * m || g.dim() != m * d || g.nodes() != nodes {
        return Err(Error::Dimension(format!("solve_affine: state {m}, noise {d}: inconsistent inputs")));
    }
    let prop = Propagator::new(a, rp.grid().h())?;
    let mut y = vec![0.0; nodes * m];
    y[..m].copy_from_slice(y0);
    let mut term = vec![0.0; m];
    for k in 0..nodes - 1 {
        cell_term(g, k, &mut term);
        let prev = DVector::from_column_slice(&y[k * m..(k + 1) * m]);
        let next = &prop.exp * prev
            + prop.drift(&f[k * m..(k + 1) * m], &f[(k + 1) * m..(k + 2) * m])
            + prop.diffusion(&term);
        guard(next.as_slice(), k + 1, DEFAULT_BLOWUP)?;
        y[(k + 1) * m..(k + 2) * m].copy_from_slice(next.as_slice());
    }
    ControlledPath::new(rp, m, y, g.y_values().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controlled::FnField;
    use crate::gubinelli::{convolve_diffusion, convolve_drift};
    use crate::linalg::{expm, scalar};
    use crate::roughpath::Grid;

    fn zero_field(m: usize, out: usize) -> impl Field {
        FnField {
            dim_in: m,
            dim_out: out,
            eval: |_: &[f64], o: &mut [f64]| o.fill(0.0),
            jacobian: |_: &[f64], o: &mut [f64]| o.fill(0.0),
        }
    }

    fn linear_noise(sigma: f64) -> impl Field {
        FnField {
            dim_in: 1,
            dim_out: 1,
            eval: move |y: &[f64], o: &mut [f64]| o[0] = sigma * y[0],
            jacobian: move |_: &[f64], o: &mut [f64]| o[0] = sigma,
        }
    }

    fn unit_noise() -> impl Field {
        FnField {
            dim_in: 1,
            dim_out: 1,
            eval: |_: &[f64], o: &mut [f64]| o[0] = 1.0,
            jacobian: |_: &[f64], o: &mut [f64]| o[0] = 0.0,
        }
    }

    #[test]
    fn linear_flow_without_fields() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let rp = Arc::new(RoughPath::zero(0.45, Grid::new(0.0, 1.0, 64).unwrap(), 1).unwrap());
        let y = solve_rde(&a, &zero_field(2, 2), &zero_field(2, 2), rp, &[1.0, 2.0], DEFAULT_BLOWUP).unwrap();
        let exact = expm(&a, 1.0) * DVector::from_column_slice(&[1.0, 2.0]);
        assert!((y.y(64)[0] - exact[0]).abs() < 1e-12);
        assert!((y.y(64)[1] - exact[1]).abs() < 1e-12);
    }

    #[test]
    fn stratonovich_linear_sde_converges() {
        let sigma = 0.8;
        let fine = RoughPath::lift_brownian(3, Grid::new(0.0, 1.0, 4096).unwrap(), 1, 1, 0.45).unwrap();
        let exact = (sigma * fine.inc1(0, 4096)).exp();
        let mut errs = Vec::new();
        for n in [64usize, 128, 256, 512] {
            let rp = Arc::new(fine.coarsen(4096 / n).unwrap());
            let y = solve_rde(&scalar(0.0), &zero_field(1, 1), &linear_noise(sigma), rp, &[1.0], DEFAULT_BLOWUP).unwrap();
            errs.push((y.y(n)[0] - exact).abs());
        }
        assert!(errs[3] < errs[0], "{errs:?}");
    }

    #[test]
    fn ou_matches_variation_of_constants() {
        let rp = Arc::new(RoughPath::lift_brownian(4, Grid::new(0.0, 1.0, 512).unwrap(), 1, 1, 0.45).unwrap());
        let y = solve_rde(&scalar(-1.0), &zero_field(1, 1), &unit_noise(), rp.clone(), &[0.3], DEFAULT_BLOWUP).unwrap();
        let one = ControlledPath::constant(rp.clone(), &[1.0]);
        let drift = convolve_drift(&scalar(-1.0), &vec![0.0; 513], rp.clone()).unwrap();
        for k in [128usize, 512] {
            let t = rp.grid().node(k);
            let v = (-t).exp() * 0.3 + drift.y(k)[0] + convolve_diffusion(&scalar(-1.0), &one, k).unwrap()[0];
            assert!((y.y(k)[0] - v).abs() < 1e-4);
        }
    }

    #[test]
    fn affine_cases() {
        let rp = Arc::new(RoughPath::zero(0.45, Grid::new(0.0, 1.0, 64).unwrap(), 1).unwrap());
        let zero = ControlledPath::zero(rp.clone(), 1);
        let y = solve_affine(&scalar(-2.0), &vec![0.0; 65], &zero, rp.clone(), &[1.5]).unwrap();
        assert!((y.y(64)[0] - 1.5 * (-2f64).exp()).abs() < 1e-13);
        let y = solve_affine(&scalar(-1.0), &vec![1.0; 65], &zero, rp.clone(), &[0.0]).unwrap();
        for k in 0..=64 {
            let t = rp.grid().node(k);
            assert!((y.y(k)[0] - (1.0 - (-t).exp())).abs() < 1e-13);
        }
    }

    #[test]
    fn affine_agrees_with_rde_on_ou() {
        let rp = Arc::new(RoughPath::lift_brownian(5, Grid::new(0.0, 1.0, 512).unwrap(), 1, 1, 0.45).unwrap());
        let a = solve_rde(&scalar(-1.0), &zero_field(1, 1), &unit_noise(), rp.clone(), &[0.0], DEFAULT_BLOWUP).unwrap();
        let one = ControlledPath::constant(rp.clone(), &[1.0]);
        let b = solve_affine(&scalar(-1.0), &vec![0.0; 513], &one, rp, &[0.0]).unwrap();
        for k in 0..=512 {
            assert!((a.y(k)[0] - b.y(k)[0]).abs() < 1e-4);
        }
    }

    #[test]
    fn blowup_is_reported_with_node() {
        let rp = Arc::new(RoughPath::zero(0.45, Grid::new(0.0, 10.0, 100).unwrap(), 1).unwrap());
        let r = solve_rde(&scalar(3.0), &zero_field(1, 1), &zero_field(1, 1), rp, &[1.0], 1e6);
        match r {
            Err(Error::BlowUp { node, .. }) => assert!(node > 0 && node < 100),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn rde_remainder_is_refinement_stable() {
        let fine = RoughPath::lift_brownian(6, Grid::new(0.0, 1.0, 1024).unwrap(), 1, 1, 0.45).unwrap();
        let norms: Vec<f64> = [256usize, 512, 1024]
            .iter()
            .map(|&n| {
                let rp = Arc::new(fine.coarsen(1024 / n).unwrap());
                let y = solve_rde(&scalar(-0.5), &zero_field(1, 1), &linear_noise(0.5), rp, &[1.0], DEFAULT_BLOWUP).unwrap();
                y.norm_d2g().holder_remainder
            })
            .collect();
        for w in norms.windows(2) {
            let r = w[1] / w[0];
            assert!((0.5..=2.0).contains(&r), "{norms:?}");
        }
    }
}
