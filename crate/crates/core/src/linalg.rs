//! Dense factorization helpers shared by the PTDF builder, the interior-point solver and the
//! reduced linear system.

use nalgebra::{DMatrix, DVector};

/// Outcome of a square solve with a least-squares fallback.
#[derive(Debug, Clone)]
pub struct SquareSolve {
    pub x: DVector<f64>,
    /// `true` when the LU route was rejected and the minimum-norm least-squares route was used.
    pub fallback: bool,
    /// Ratio of the largest to the smallest pivot magnitude (LU) or singular value (SVD).
    pub condition: f64,
}

/// Pivot ratio above which an LU factorization is treated as numerically singular.
pub const MAX_PIVOT_RATIO: f64 = 1e13;

/// Solve `a x = b` by LU with partial pivoting, falling back to the SVD minimum-norm
/// least-squares solution when the pivots show rank deficiency.
///
/// Returns `None` only if both routes fail to produce finite values.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<SquareSolve> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    if n == 0 {
        return Some(SquareSolve {
            x: DVector::zeros(0),
            fallback: false,
            condition: 1.0,
        });
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = u[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition.is_finite() && condition < MAX_PIVOT_RATIO {
        if let Some(x) = lu.solve(b) {
            if x.iter().all(|v| v.is_finite()) {
                return Some(SquareSolve {
                    x,
                    fallback: false,
                    condition,
                });
            }
        }
    }
    least_squares(a, b).map(|(x, cond)| SquareSolve {
        x,
        fallback: true,
        condition: cond,
    })
}

/// Minimum-norm least-squares solution via SVD. Returns the solution and the ratio of the
/// largest to the smallest retained singular value.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * 1e-12 * (a.nrows().max(a.ncols()) as f64);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .filter(|&s| s > eps)
        .fold(f64::INFINITY, f64::min);
    let x = svd.solve(b, eps).ok()?;
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    let cond = if smin.is_finite() && smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    Some((x, cond))
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
