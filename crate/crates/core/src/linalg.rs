//! Blocked triangular solves with matrix right-hand sides. The off-diagonal
//! work goes through `gemm`, which is much faster than nalgebra's
//! column-at-a-time substitution for the N x N systems of the filter.

use nalgebra::{Cholesky, DMatrix, Dyn};

const BLOCK: usize = 64;

/// `L^{-1} B` for lower-triangular `L`.
pub(crate) fn lower_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    let mut r0 = 0;
    while r0 < n {
        let bs = BLOCK.min(n - r0);
        if r0 > 0 {
            let (done, mut block) = x.rows_range_pair_mut(..r0, r0..r0 + bs);
            block.gemm(-1.0, &l.view((r0, 0), (bs, r0)), &done, 1.0);
        }
        let diag = l.view((r0, r0), (bs, bs)).into_owned();
        let mut block = x.rows_mut(r0, bs);
        diag.solve_lower_triangular_mut(&mut block);
        r0 += bs;
    }
    x
}

/// `U^{-1} B` for upper-triangular `U`.
pub(crate) fn upper_solve(u: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let mut x = b.clone();
    let mut r1 = n;
    while r1 > 0 {
        let bs = BLOCK.min(r1);
        let r0 = r1 - bs;
        if r1 < n {
            let (mut block, done) = x.rows_range_pair_mut(r0..r1, r1..);
            block.gemm(-1.0, &u.view((r0, r1), (bs, n - r1)), &done, 1.0);
        }
        let diag = u.view((r0, r0), (bs, bs)).into_owned();
        let mut block = x.rows_mut(r0, bs);
        diag.solve_upper_triangular_mut(&mut block);
        r1 = r0;
    }
    x
}

/// `(L L^T)^{-1} B`.
pub(crate) fn cholesky_solve(factor: &Cholesky<f64, Dyn>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let l = factor.l();
    let y = lower_solve(&l, b);
    upper_solve(&l.transpose(), &y)
}

/// `A^T B` through a transposed copy; `tr_mul` does not use the fast kernel.
pub(crate) fn at_b(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}
