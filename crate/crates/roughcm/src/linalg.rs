//! Small dense helpers on top of nalgebra used by the semigroup convolutions.

use nalgebra::DMatrix;

/// Matrix exponential e^{A t}.
pub fn expm(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    (a * t).exp()
}

/// Returns (e^{A h}, ∫_0^h e^{A s} ds), both from one exponential of the
/// augmented block matrix [[A, I], [0, 0]].
pub fn exp_and_integral(a: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(2 * m, 2 * m);
    aug.view_mut((0, 0), (m, m)).copy_from(a);
    for i in 0..m {
        aug[(i, m + i)] = 1.0;
    }
    let e = (aug * h).exp();
    let ea = e.view((0, 0), (m, m)).into_owned();
    let int = e.view((0, m), (m, m)).into_owned();
    (ea, int)
}

/// Spectral norm (largest singular value).
pub fn norm2(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().max()
}

pub fn scalar(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}
