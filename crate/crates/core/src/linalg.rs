//! Small dense solves used by the ALS sweeps and the initialization.

use nalgebra::{Cholesky, DVector};

use crate::tensor::Matrix;

/// Relative ridge added to a Gram matrix whose Cholesky factorization fails.
pub const RIDGE_SCALE: f64 = 1e-10;

/// Solves `gram * x = rhs` for symmetric positive semi-definite `gram`.
/// Falls back to `gram + 1e-10 * trace(gram) * I` when the plain
/// factorization breaks down. Returns `None` only for an all-zero Gram.
pub fn solve_spd(gram: &Matrix, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(gram.clone()) {
        let x = ch.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let trace = gram.trace();
    if !(trace > 0.0) {
        return None;
    }
    let n = gram.nrows();
    let ridged = gram + Matrix::identity(n, n) * (RIDGE_SCALE * trace);
    Cholesky::new(ridged).map(|ch| ch.solve(rhs))
}

/// Relative singular-value threshold below which a least-squares system
/// is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Least-squares solution of `lhs * x = rhs`, or `None` when `lhs` does not
/// have full column rank.
pub fn lstsq_full_rank(lhs: &Matrix, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = lhs.ncols();
    if lhs.nrows() < n {
        return None;
    }
    let svd = lhs.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return None;
    }
    svd.solve(rhs, 0.0).ok()
}
