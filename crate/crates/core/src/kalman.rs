//! Kalman filtering and RTS smoothing for the ADMM x-update.
//!
//! Each frame takes two measurement updates: the physical measurement
//! `(H_t, R_t, y_t)`, then the ADMM pseudo-measurement
//! `(W_t, rho^{-1} I, z_t)`. The backward pass then returns the minimizer of
//! the x-subproblem objective (see [`crate::ssm::eval_phi`]) together with
//! the smoothed covariances.
//!
//! The first frame is not predicted: both updates act on the prior
//! `(m_1, P_1)` directly, so the prior term is counted exactly once.
//!
//! Inverses are never formed; gains come from Cholesky solves against the
//! innovation (or predicted) covariance. Covariance updates use the plain
//! `P - K S K^T` form followed by symmetrization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{at_b, cholesky_solve, lower_solve};
use crate::operators::{Covariance, LinOp};
use crate::ssm::{FrameSequence, SequenceModel};

/// Gaussian belief over one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Belief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim("Belief covariance rows", mean.len(), cov.nrows())?;
        check_dim("Belief covariance cols", mean.len(), cov.ncols())?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-frame beliefs of the forward pass.
#[derive(Debug, Clone)]
pub struct FilterTrace {
    /// Before any update; the prior at frame 0.
    pub predicted: Vec<Belief>,
    /// After the measurement update.
    pub post_measurement: Vec<Belief>,
    /// After the pseudo-measurement update.
    pub filtered: Vec<Belief>,
}

/// Smoothed means (the x-update) and their covariances.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub means: FrameSequence,
    pub covs: Vec<DMatrix<f64>>,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn factor(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(format!("{what} factorization failed")))
}

fn require_pd(c: &Covariance, what: &str) -> Result<()> {
    if c.is_positive_definite() {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite(format!("{what} has zero variance")))
    }
}

/// Prediction: `m = A m_prev`, `P = A P_prev A^T + Q`.
pub fn predict(prev: &Belief, transition: &LinOp, process: &Covariance) -> Result<Belief> {
    check_dim("predict", transition.input_dim(), prev.dim())?;
    check_dim("predict Q", transition.output_dim(), process.dim())?;
    require_pd(process, "process covariance")?;
    let mean = transition.apply(&prev.mean)?;
    let ap = transition.apply_columns(&prev.cov)?;
    let mut cov = transition.apply_columns(&ap.transpose())?;
    process.add_to(&mut cov);
    symmetrize(&mut cov);
    Ok(Belief { mean, cov })
}

fn gaussian_update(
    prior: &Belief,
    op: &LinOp,
    noise: &Covariance,
    obs: &DVector<f64>,
    what: &'static str,
) -> Result<Belief> {
    check_dim(what, op.input_dim(), prior.dim())?;
    check_dim(what, op.output_dim(), obs.len())?;
    check_dim(what, op.output_dim(), noise.dim())?;
    require_pd(noise, what)?;
    // L P, and S = L P L^T + C.
    let lp = op.apply_columns(&prior.cov)?;
    let mut innovation_cov = op.apply_columns(&lp.transpose())?;
    noise.add_to(&mut innovation_cov);
    symmetrize(&mut innovation_cov);
    let s = factor(innovation_cov, "innovation covariance")?;
    // With S = C C^T and Y = C^{-1} L P: K^T = C^{-T} Y and K S K^T = Y^T Y.
    let chol = s.l();
    let scaled = lower_solve(&chol, &lp);
    let innovation = obs - op.apply(&prior.mean)?;
    let whitened = chol
        .solve_lower_triangular(&innovation)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what}: singular factor")))?;
    let mean = &prior.mean + scaled.tr_mul(&whitened);
    let mut cov = &prior.cov - at_b(&scaled, &scaled);
    symmetrize(&mut cov);
    Ok(Belief { mean, cov })
}

/// Update with the physical measurement `y_t`.
pub fn update_measurement(
    predicted: &Belief,
    measurement: &LinOp,
    noise: &Covariance,
    y: &DVector<f64>,
) -> Result<Belief> {
    gaussian_update(predicted, measurement, noise, y, "update_measurement")
}

/// Update with the ADMM pseudo-measurement `z_t = w_t + eta_t / rho`,
/// observed through `W_t` with covariance `rho^{-1} I`.
pub fn update_auxiliary(
    post_measurement: &Belief,
    transform: &LinOp,
    sigma: &Covariance,
    z: &DVector<f64>,
) -> Result<Belief> {
    gaussian_update(post_measurement, transform, sigma, z, "update_auxiliary")
}

/// Forward pass over all frames.
pub fn filter(
    model: &SequenceModel,
    y: &FrameSequence,
    z_rho: &FrameSequence,
    rho: f64,
    transforms: &[LinOp],
) -> Result<FilterTrace> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Config(format!("rho must be positive, got {rho}")));
    }
    let frames = model.frames();
    model.check_measurements(y, "filter y")?;
    check_dim("filter z", frames, z_rho.len())?;
    check_dim("filter transforms", frames, transforms.len())?;

    let mut trace = FilterTrace {
        predicted: Vec::with_capacity(frames),
        post_measurement: Vec::with_capacity(frames),
        filtered: Vec::with_capacity(frames),
    };
    for (t, transform) in transforms.iter().enumerate() {
        let pred = if t == 0 {
            Belief::new(model.prior_mean().clone(), model.prior_cov().to_dense())?
        } else {
            predict(&trace.filtered[t - 1], model.transition(t), model.process_cov(t))?
        };
        let post_y = update_measurement(
            &pred,
            model.measurement(t),
            model.measurement_cov(t),
            &y.frames()[t],
        )?;
        let sigma = Covariance::scaled_identity(transform.output_dim(), 1.0 / rho)?;
        let filtered = update_auxiliary(&post_y, transform, &sigma, &z_rho.frames()[t])?;
        trace.predicted.push(pred);
        trace.post_measurement.push(post_y);
        trace.filtered.push(filtered);
    }
    Ok(trace)
}

/// Backward RTS pass, with gain `G_t = P_t A_{t+1}^T Pbar_{t+1}^{-1}`.
pub fn rts_smooth(model: &SequenceModel, trace: &FilterTrace) -> Result<SmootherOutput> {
    let frames = model.frames();
    check_dim("rts_smooth predicted", frames, trace.predicted.len())?;
    check_dim("rts_smooth filtered", frames, trace.filtered.len())?;

    let mut means = vec![DVector::zeros(0); frames];
    let mut covs = vec![DMatrix::zeros(0, 0); frames];
    means[frames - 1] = trace.filtered[frames - 1].mean.clone();
    covs[frames - 1] = trace.filtered[frames - 1].cov.clone();
    for t in (0..frames - 1).rev() {
        let filt = &trace.filtered[t];
        let next_pred = &trace.predicted[t + 1];
        let ap = model.transition(t + 1).apply_columns(&filt.cov)?;
        let pbar = factor(next_pred.cov.clone(), "predicted covariance")?;
        // G^T = Pbar^{-1} A P_t.
        let gain_t = cholesky_solve(&pbar, &ap);
        let mean = &filt.mean + gain_t.tr_mul(&(&means[t + 1] - &next_pred.mean));
        let spread = &covs[t + 1] - &next_pred.cov;
        let mut cov = &filt.cov + at_b(&gain_t, &(spread * &gain_t));
        symmetrize(&mut cov);
        means[t] = mean;
        covs[t] = cov;
    }
    Ok(SmootherOutput {
        means: FrameSequence::new(means, model.shape())?,
        covs,
    })
}

/// Kalman-smoother x-update: the minimizer of the x-subproblem at `z_rho`.
pub fn ks_x_update(
    model: &SequenceModel,
    y: &FrameSequence,
    z_rho: &FrameSequence,
    rho: f64,
    transforms: &[LinOp],
) -> Result<SmootherOutput> {
    let trace = filter(model, y, z_rho, rho, transforms)?;
    rts_smooth(model, &trace)
}
