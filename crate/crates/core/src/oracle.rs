//! Test-only dense stacked oracle: explicit block matrices, explicit
//! inverses, LU solve. Shares nothing with the solver code paths beyond
//! `to_dense`.

use nalgebra::{DMatrix, DVector};

use crate::operators::LinOp;
use crate::ssm::{FrameSequence, SequenceModel};

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

fn inv(m: DMatrix<f64>) -> DMatrix<f64> {
    m.try_inverse().expect("invertible")
}

pub(crate) struct DenseSystem {
    pub hessian: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

pub(crate) fn dense_system(
    model: &SequenceModel,
    y: &FrameSequence,
    z: &FrameSequence,
    rho: f64,
    w: &[LinOp],
) -> DenseSystem {
    let (n, t) = (model.state_dim(), model.frames());
    let h = block_diag(&(0..t).map(|k| model.measurement(k).to_dense()).collect::<Vec<_>>());
    let r_inv = block_diag(
        &(0..t)
            .map(|k| inv(model.measurement_cov(k).to_dense()))
            .collect::<Vec<_>>(),
    );
    let q_inv = block_diag(&(0..t).map(|k| inv(model.stacked_cov(k).to_dense())).collect::<Vec<_>>());
    let ws = block_diag(&w.iter().map(|op| op.to_dense()).collect::<Vec<_>>());
    let mut psi = DMatrix::identity(n * t, n * t);
    for k in 1..t {
        psi.view_mut((k * n, (k - 1) * n), (n, n))
            .copy_from(&(-model.transition(k).to_dense()));
    }
    let mut m = DVector::zeros(n * t);
    m.rows_mut(0, n).copy_from(model.prior_mean());
    let hessian = h.transpose() * &r_inv * &h + psi.transpose() * &q_inv * &psi + ws.transpose() * &ws * rho;
    let rhs = h.transpose() * &r_inv * y.stacked() + psi.transpose() * &q_inv * m + ws.transpose() * z.stacked() * rho;
    DenseSystem { hessian, rhs }
}

/// Stacked minimizer of the x-subproblem objective.
pub(crate) fn dense_x_minimizer(
    model: &SequenceModel,
    y: &FrameSequence,
    z: &FrameSequence,
    rho: f64,
    w: &[LinOp],
) -> DVector<f64> {
    let sys = dense_system(model, y, z, rho, w);
    sys.hessian.lu().solve(&sys.rhs).expect("nonsingular system")
}
