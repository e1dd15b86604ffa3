use nalgebra::{DMatrix, DVector};

/// Pivots below this magnitude (relative to the largest entry) count as singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Solves `a x = b` by LU with partial pivoting; `None` if numerically singular.
pub fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if a.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let lu = a.lu();
    let u = lu.u();
    if (0..u.nrows()).any(|i| u[(i, i)].abs() < PIVOT_TOL * scale) {
        return None;
    }
    lu.solve(b)
}
