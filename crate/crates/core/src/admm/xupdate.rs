//! x-update strategies other than the Kalman smoother.
//!
//! The x-subproblem is the quadratic
//!
//! ```text
//! phi(x) = 1/2 sum_t ||y_t - H_t x_t||^2_{R_t^{-1}}
//!        + 1/2 ||Psi x - m||^2_{Qtilde^{-1}}
//!        + rho/2 ||W x - z||^2
//! ```
//!
//! with `Qtilde = blockdiag(P_1, Q_2, ..., Q_T)` and `m = (m_1, 0, ..., 0)`,
//! which folds the prior on the first frame into the dynamics residual.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::linalg::at_b;
use crate::operators::LinOp;
use crate::ssm::{apply_psi, apply_psi_adjoint, FrameSequence, SequenceModel};

/// Largest stacked system (`N * T`) the exact strategy will factorize.
pub const DEFAULT_EXACT_CAP: usize = 20_000;

fn check_inputs(
    model: &SequenceModel,
    x: &FrameSequence,
    rho: f64,
    transforms: &[LinOp],
    context: &'static str,
) -> Result<()> {
    model.check_states(x, context)?;
    check_dim(context, model.frames(), transforms.len())?;
    for w in transforms {
        check_dim(context, model.state_dim(), w.input_dim())?;
    }
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::Config(format!("rho must be non-negative, got {rho}")));
    }
    Ok(())
}

/// `Hess * x - b` when `data` is given, `Hess * x` otherwise.
fn normal_apply(
    model: &SequenceModel,
    x: &FrameSequence,
    rho: f64,
    transforms: &[LinOp],
    data: Option<(&FrameSequence, &FrameSequence)>,
) -> Result<FrameSequence> {
    let mut dyn_res = apply_psi(model, x)?;
    if data.is_some() {
        dyn_res.frames_mut()[0] -= model.prior_mean();
    }
    for (t, r) in dyn_res.frames_mut().iter_mut().enumerate() {
        *r = model.stacked_cov(t).solve(r)?;
    }
    let mut out = apply_psi_adjoint(model, &dyn_res)?;
    for (t, g) in out.frames_mut().iter_mut().enumerate() {
        let xt = &x.frames()[t];
        let h = model.measurement(t);
        let mut e = h.apply(xt)?;
        let w = &transforms[t];
        let mut c = w.apply(xt)?;
        if let Some((y, z)) = data {
            e -= &y.frames()[t];
            c -= &z.frames()[t];
        }
        *g += h.apply_adjoint(&model.measurement_cov(t).solve(&e)?)?;
        *g += w.apply_adjoint(&c)? * rho;
    }
    Ok(out)
}

/// Gradient of the x-subproblem objective at `x`.
pub fn grad_phi(
    model: &SequenceModel,
    y: &FrameSequence,
    x: &FrameSequence,
    z_rho: &FrameSequence,
    rho: f64,
    transforms: &[LinOp],
) -> Result<FrameSequence> {
    check_inputs(model, x, rho, transforms, "grad_phi")?;
    model.check_measurements(y, "grad_phi")?;
    check_dim("grad_phi z", model.frames(), z_rho.len())?;
    normal_apply(model, x, rho, transforms, Some((y, z_rho)))
}

/// Matrix-free Hessian product `(H^T R^{-1} H + Psi^T Qtilde^{-1} Psi + rho W^T W) d`.
pub fn hessian_apply(
    model: &SequenceModel,
    d: &FrameSequence,
    rho: f64,
    transforms: &[LinOp],
) -> Result<FrameSequence> {
    check_inputs(model, d, rho, transforms, "hessian_apply")?;
    normal_apply(model, d, rho, transforms, None)
}

/// One gradient step `x - step * grad`.
pub fn gd_x_update(
    model: &SequenceModel,
    y: &FrameSequence,
    x: &FrameSequence,
    z_rho: &FrameSequence,
    rho: f64,
    transforms: &[LinOp],
    step: f64,
) -> Result<FrameSequence> {
    if !(step >= 0.0) {
        return Err(Error::Config(format!("gradient step must be non-negative, got {step}")));
    }
    let g = grad_phi(model, y, x, z_rho, rho, transforms)?;
    x.axpy(-step, &g)
}

/// Conjugate-gradient sub-iterations on the x-subproblem, warm-started at `x`.
///
/// With `iters == 1` this is a single steepest-descent step with the exact
/// line-search length `<p, p> / <p, Hess p>`, `p = -grad`.
pub fn cg_x_update(
    model: &SequenceModel,
    y: &FrameSequence,
    x: &FrameSequence,
    z_rho: &FrameSequence,
    rho: f64,
    transforms: &[LinOp],
    iters: usize,
) -> Result<FrameSequence> {
    let mut x = x.clone();
    let mut r = grad_phi(model, y, &x, z_rho, rho, transforms)?.scaled(-1.0);
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for _ in 0..iters.max(1) {
        if rr == 0.0 {
            break;
        }
        let hp = hessian_apply(model, &p, rho, transforms)?;
        let curvature = p.dot(&hp);
        if !(curvature > 0.0) {
            return Err(Error::NonPositiveCurvature(curvature));
        }
        let alpha = rr / curvature;
        x = x.axpy(alpha, &p)?;
        r = r.axpy(-alpha, &hp)?;
        let rr_next = r.dot(&r);
        p = r.axpy(rr_next / rr, &p)?;
        rr = rr_next;
    }
    Ok(x)
}

/// Power-method estimate of the largest Hessian eigenvalue.
pub fn estimate_lipschitz(
    model: &SequenceModel,
    rho: f64,
    transforms: &[LinOp],
    iters: usize,
) -> Result<f64> {
    let n = model.state_dim();
    // Deterministic, non-degenerate start.
    let frames = (0..model.frames())
        .map(|t| DVector::from_fn(n, |i, _| 1.0 + 0.5 * (((i + 7 * t) as f64) * 0.618).sin()))
        .collect();
    let mut v = FrameSequence::new(frames, model.shape())?;
    v = v.scaled(1.0 / v.norm());
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let hv = hessian_apply(model, &v, rho, transforms)?;
        estimate = v.dot(&hv);
        let norm = hv.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = hv.scaled(1.0 / norm);
    }
    Ok(estimate)
}

/// Dense Cholesky factorization of the stacked x-subproblem system, reused
/// across ADMM iterations since only the right-hand side changes.
pub struct ExactSolver {
    factor: Cholesky<f64, Dyn>,
    /// `H^T R^{-1} y + Psi^T Qtilde^{-1} m`, the z-independent part of the right-hand side.
    data_rhs: DVector<f64>,
    rho: f64,
    frames: usize,
}

impl ExactSolver {
    pub fn new(
        model: &SequenceModel,
        y: &FrameSequence,
        rho: f64,
        transforms: &[LinOp],
        cap: usize,
    ) -> Result<Self> {
        let (n, frames) = (model.state_dim(), model.frames());
        let size = n * frames;
        if size > cap {
            return Err(Error::CapExceeded { size, cap });
        }
        model.check_measurements(y, "ExactSolver y")?;
        check_inputs(model, &FrameSequence::zeros(frames, model.shape()), rho, transforms, "ExactSolver")?;

        let mut system = DMatrix::<f64>::zeros(size, size);
        for (t, w) in transforms.iter().enumerate() {
            let h = model.measurement(t).to_dense();
            let mut block = at_b(&h, &model.measurement_cov(t).solve_matrix(&h)?);
            block += model.stacked_cov(t).solve_matrix(&DMatrix::identity(n, n))?;
            if w.is_identity() {
                for i in 0..n {
                    block[(i, i)] += rho;
                }
            } else {
                let wd = w.to_dense();
                block += at_b(&wd, &wd) * rho;
            }
            if t + 1 < frames {
                let a = model.transition(t + 1).to_dense();
                let q_inv_a = model.process_cov(t + 1).solve_matrix(&a)?;
                block += at_b(&a, &q_inv_a);
                // Coupling between frames t and t + 1 is -Q^{-1} A below the diagonal.
                let off = -q_inv_a;
                system.view_mut(((t + 1) * n, t * n), (n, n)).copy_from(&off);
                system.view_mut((t * n, (t + 1) * n), (n, n)).copy_from(&off.transpose());
            }
            system.view_mut((t * n, t * n), (n, n)).copy_from(&block);
        }
        let factor = Cholesky::new(system)
            .ok_or_else(|| Error::NotPositiveDefinite("stacked x-update system".into()))?;

        let zero = FrameSequence::zeros(frames, model.shape());
        let zero_z = FrameSequence::zeros(
            frames,
            transforms[0].output_shape(model.shape()),
        );
        let data_rhs = normal_apply(model, &zero, 0.0, transforms, Some((y, &zero_z)))?
            .scaled(-1.0)
            .stacked();
        Ok(Self {
            factor,
            data_rhs,
            rho,
            frames,
        })
    }

    pub fn solve(
        &self,
        model: &SequenceModel,
        z_rho: &FrameSequence,
        transforms: &[LinOp],
    ) -> Result<FrameSequence> {
        check_dim("ExactSolver::solve z", self.frames, z_rho.len())?;
        let coupling = z_rho.map_frames(model.shape(), |t, z| Ok(transforms[t].apply_adjoint(z)? * self.rho))?;
        let rhs = &self.data_rhs + coupling.stacked();
        let x = self.factor.solve(&rhs);
        FrameSequence::from_stacked(&x, self.frames, model.shape())
    }
}

/// Closed-form x-update by a dense stacked solve.
pub fn exact_x_update(
    model: &SequenceModel,
    y: &FrameSequence,
    z_rho: &FrameSequence,
    rho: f64,
    transforms: &[LinOp],
    cap: usize,
) -> Result<FrameSequence> {
    ExactSolver::new(model, y, rho, transforms, cap)?.solve(model, z_rho, transforms)
}
