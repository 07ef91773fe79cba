//! Center/stable splitting of a diagonalizable linear part A = A^c ⊕ A^s.
//!
//! Eigenvalues with Re λ < −tol are stable, the rest belong to the center
//! block (flagged center-unstable when Re λ > tol). Spectral projections are
//! Lagrange interpolation polynomials in A, which is exact for diagonalizable
//! matrices.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::linalg::{expm, norm2};

pub const DEFECT_TOL: f64 = 1e-8;
const SAMPLES: usize = 201;

#[derive(Debug, Clone)]
pub struct SpectralSplit {
    pub ac: DMatrix<f64>,
    pub as_: DMatrix<f64>,
    pub pc: DMatrix<f64>,
    pub ps: DMatrix<f64>,
    /// Orthonormal bases of the center and stable ranges (columns).
    pub basis_c: DMatrix<f64>,
    pub basis_s: DMatrix<f64>,
    pub nu: f64,
    pub beta: f64,
    pub mc: f64,
    pub ms: f64,
    pub center_dim: usize,
    pub stable_dim: usize,
    pub center_unstable: bool,
    /// ν + β, surfaced for the user to judge the gap condition.
    pub gap: f64,
    pub eigenvalues: Vec<(f64, f64)>,
}

type CMat = DMatrix<Complex<f64>>;

fn to_complex(a: &DMatrix<f64>) -> CMat {
    a.map(|x| Complex::new(x, 0.0))
}

fn distinct(eigs: &[Complex<f64>], scale: f64) -> Vec<Complex<f64>> {
    let mut out: Vec<Complex<f64>> = Vec::new();
    for e in eigs {
        if !out.iter().any(|o| (o - e).norm() <= 1e-7 * scale) {
            out.push(*e);
        }
    }
    out
}

fn range_basis(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let svd = p.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let cols: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] > 0.5).collect();
    DMatrix::from_fn(n, cols.len(), |r, c| u[(r, cols[c])])
}

fn sup_sampled(block: &DMatrix<f64>, t_from: f64, t_to: f64, weight: impl Fn(f64) -> f64) -> f64 {
    if block.nrows() == 0 {
        return 1.0;
    }
    (0..SAMPLES)
        .map(|i| {
            let t = t_from + (t_to - t_from) * i as f64 / (SAMPLES - 1) as f64;
            norm2(&expm(block, t)) * weight(t)
        })
        .fold(1.0, f64::max)
}

/// Splits `a` into center and stable parts.
pub fn split(a: &DMatrix<f64>, tol: f64) -> Result<SpectralSplit> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::Dimension("split needs a non-empty square matrix".into()));
    }
    let n = a.nrows();
    let eigs: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    let scale = 1.0 + a.norm();
    let uniq = distinct(&eigs, scale);

    let ac_c = to_complex(a);
    let id = CMat::identity(n, n);
    let mut minpoly = id.clone();
    for mu in &uniq {
        minpoly = &minpoly * (&ac_c - &id * *mu);
    }
    let defect = minpoly.map(|z| z.norm()).max() / scale.powi(uniq.len() as i32);
    if defect > DEFECT_TOL {
        return Err(Error::Defective { defect });
    }

    let is_center = |z: &Complex<f64>| z.re >= -tol;
    let mut pc_c = CMat::zeros(n, n);
    for mu in uniq.iter().filter(|z| is_center(z)) {
        let mut l = id.clone();
        for nu in uniq.iter().filter(|z| *z != mu) {
            l = &l * (&ac_c - &id * *nu) / (mu - nu);
        }
        pc_c += l;
    }
    let pc = pc_c.map(|z| z.re);
    let ps = DMatrix::<f64>::identity(n, n) - &pc;
    let center_dim = eigs.iter().filter(|z| is_center(z)).count();
    let stable_dim = n - center_dim;

    let basis_c = range_basis(&pc);
    let basis_s = range_basis(&ps);
    let ac = basis_c.transpose() * a * &basis_c;
    let as_ = basis_s.transpose() * a * &basis_s;

    let center_min_re = eigs.iter().filter(|z| is_center(z)).map(|z| z.re).fold(f64::INFINITY, f64::min);
    let nu = if center_dim == 0 { 0.0 } else { (-center_min_re).max(0.0) };
    let beta = if stable_dim == 0 {
        f64::INFINITY
    } else {
        -eigs.iter().filter(|z| !is_center(z)).map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    };
    let mc = sup_sampled(&ac, -10.0, 0.0, |t| (-nu * t).exp());
    let ms = if stable_dim == 0 { 1.0 } else { sup_sampled(&as_, 0.0, 10.0, |t| (beta * t).exp()) };
    let center_unstable = eigs.iter().any(|z| z.re > tol);

    Ok(SpectralSplit {
        ac,
        as_,
        pc,
        ps,
        basis_c,
        basis_s,
        nu,
        beta,
        mc,
        ms,
        center_dim,
        stable_dim,
        center_unstable,
        gap: nu + beta,
        eigenvalues: eigs.iter().map(|z| (z.re, z.im)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_center_stable() {
        let s = split(&DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, -1.0])), 1e-9).unwrap();
        assert_eq!((s.center_dim, s.stable_dim), (1, 1));
        assert!(s.ac[(0, 0)].abs() < 1e-14);
        assert!((s.as_[(0, 0)] + 1.0).abs() < 1e-14);
        assert!((s.beta - 1.0).abs() < 1e-14);
        assert!((s.mc - 1.0).abs() < 1e-12 && (s.ms - 1.0).abs() < 1e-12);
        assert!(!s.center_unstable);
    }

    #[test]
    fn center_unstable_flag() {
        let s = split(&DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, -2.0])), 1e-9).unwrap();
        assert!(s.center_unstable);
        assert!((s.ac[(0, 0)] - 0.3).abs() < 1e-14);
        assert!((s.as_[(0, 0)] + 2.0).abs() < 1e-14);
        let s = split(&DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, -2.0])), 1e-9).unwrap();
        assert!(!s.center_unstable);
    }

    #[test]
    fn fully_stable() {
        let s = split(&(-DMatrix::<f64>::identity(2, 2)), 1e-9).unwrap();
        assert_eq!(s.center_dim, 0);
        assert!((s.ps.clone() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
    }

    fn mixed() -> DMatrix<f64> {
        let v = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.2, 1.0, 0.3, 0.0, -0.4, 1.0]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, -1.5, -0.7]));
        &v * d * v.clone().try_inverse().unwrap()
    }

    #[test]
    fn projections_commute_with_semigroup() {
        let a = mixed();
        let s = split(&a, 1e-9).unwrap();
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((&s.pc + &s.ps - &id).norm() < 1e-10);
        assert!((&s.pc * &s.pc - &s.pc).norm() < 1e-10);
        for t in [-2.0, 0.5, 3.0] {
            let e = expm(&a, t);
            assert!((&s.pc * &e - &e * &s.pc).norm() < 1e-10);
            assert!((&s.ps * &e - &e * &s.ps).norm() < 1e-10);
        }
        assert_eq!((s.center_dim, s.stable_dim), (1, 2));
        assert!((s.beta - 0.7).abs() < 1e-10);
    }

    #[test]
    fn growth_bounds_hold_on_samples() {
        let a = mixed();
        let s = split(&a, 1e-9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let xc = DVector::from_fn(s.center_dim, |_, _| rng.random_range(-1.0..1.0));
            let xs = DVector::from_fn(s.stable_dim, |_, _| rng.random_range(-1.0..1.0));
            for i in 0..=20 {
                let t = -10.0 * i as f64 / 20.0;
                let lhs = (expm(&s.ac, t) * &xc).norm();
                assert!(lhs <= s.mc * (s.nu * t).exp() * xc.norm() * (1.0 + 1e-9) + 1e-14);
                let t = -t;
                let lhs = (expm(&s.as_, t) * &xs).norm();
                assert!(lhs <= s.ms * (-s.beta * t).exp() * xs.norm() * (1.0 + 1e-9) + 1e-14);
            }
        }
    }

    #[test]
    fn jordan_block_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        assert!(matches!(split(&a, 1e-9), Err(Error::Defective { .. })));
    }

    #[test]
    fn rotation_center_block() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -2.0]);
        let s = split(&a, 1e-9).unwrap();
        assert_eq!(s.center_dim, 2);
        assert!((s.mc - 1.0).abs() < 1e-9);
        assert_eq!(s.gap, s.beta);
    }
}
