//! Dense least squares on top of nalgebra's Householder QR.

use nalgebra::{ComplexField, DMatrix, DVector};

/// Solution of `min ||A x - b||` together with the ratio of the largest to the
/// smallest diagonal entry of `R` (a cheap condition proxy).
pub struct LstsqSolution<T: ComplexField> {
    pub x: DVector<T>,
    pub condition: f64,
}

/// Least squares for a tall matrix (`rows >= cols`). Returns `None` when `R`
/// has a zero or non-finite pivot.
pub fn lstsq<T: ComplexField<RealField = f64> + Copy>(a: DMatrix<T>, b: &DVector<T>) -> Option<LstsqSolution<T>> {
    let (rows, cols) = a.shape();
    assert!(rows >= cols, "least squares needs rows >= cols");
    let qr = a.qr();
    let q = qr.q();
    let r = qr.r();
    let qtb = q.adjoint() * b;
    let mut dmax: f64 = 0.0;
    let mut dmin = f64::INFINITY;
    for i in 0..cols {
        let d = r[(i, i)].modulus();
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    if !(dmin > 0.0) || !dmax.is_finite() {
        return None;
    }
    let x = r.solve_upper_triangular(&qtb)?;
    if x.iter().any(|v| !v.modulus().is_finite()) {
        return None;
    }
    Some(LstsqSolution { x, condition: dmax / dmin })
}
