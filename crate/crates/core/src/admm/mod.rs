//! ADMM for the MAP problem
//!
//! ```text
//! min_x  F(x) + sum_t g_t(W_t x_t)
//! ```
//!
//! split as `w_t = W_t x_t`, with a choice of x-update strategy and either a
//! proximity operator or a plug-and-play denoiser for the w-update.

mod xupdate;

pub use xupdate::{
    cg_x_update, estimate_lipschitz, exact_x_update, gd_x_update, grad_phi, hessian_apply, ExactSolver,
    DEFAULT_EXACT_CAP,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kalman::{ks_x_update, SmootherOutput};
use crate::metrics::frame_psnrs;
use crate::operators::LinOp;
use crate::priors::{Denoiser, ProxOp};
use crate::ssm::{eval_F, eval_phi, eval_prior, FrameSequence, SequenceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XStrategy {
    /// Dense Cholesky solve of the stacked system.
    Exact,
    /// One gradient step.
    Gd,
    /// Conjugate-gradient steps (one by default).
    Cg,
    /// Kalman filter and RTS smoother.
    Ks,
}

impl XStrategy {
    pub fn name(self) -> &'static str {
        match self {
            XStrategy::Exact => "exact",
            XStrategy::Gd => "gd",
            XStrategy::Cg => "cg",
            XStrategy::Ks => "ks",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoStep {
    /// `1 / L` with `L` from a few power iterations on the Hessian.
    Lipschitz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GdStep {
    Fixed(f64),
    Auto(AutoStep),
}

impl Default for GdStep {
    fn default() -> Self {
        GdStep::Fixed(1.0)
    }
}

/// Power iterations used for [`AutoStep::Lipschitz`].
pub const LIPSCHITZ_POWER_ITERS: usize = 20;

/// The splitting transform applied to every frame in prox mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    #[default]
    Identity,
    /// Horizontal and vertical forward differences (anisotropic TV with an l1 prox).
    FirstDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WMode {
    Prox {
        prox: ProxOp,
        #[serde(default)]
        transform: TransformKind,
    },
    /// Plug-and-play: `W = I` and the prox is replaced by `denoiser(. ; sigma)`.
    Denoiser { denoiser: Denoiser, sigma: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `x_t = H_t^T y_t`.
    #[default]
    Backprojection,
    Zeros,
}

fn default_max_iters() -> usize {
    100
}

fn default_cg_iters() -> usize {
    1
}

fn default_exact_cap() -> usize {
    DEFAULT_EXACT_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub x_strategy: XStrategy,
    pub w_mode: WMode,
    pub rho: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub gd_step: GdStep,
    #[serde(default = "default_cg_iters")]
    pub cg_iters: usize,
    /// Stop once `||x^{k+1} - x^k|| <= stop_tol ||x^k||`; zero runs all iterations.
    #[serde(default)]
    pub stop_tol: f64,
    #[serde(default)]
    pub init: Init,
    #[serde(default = "default_exact_cap")]
    pub exact_cap: usize,
}

impl SolverConfig {
    pub fn new(x_strategy: XStrategy, w_mode: WMode, rho: f64) -> Self {
        Self {
            x_strategy,
            w_mode,
            rho,
            max_iters: default_max_iters(),
            gd_step: GdStep::default(),
            cg_iters: default_cg_iters(),
            stop_tol: 0.0,
            init: Init::default(),
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::Config(format!("stop_tol must be non-negative, got {}", self.stop_tol)));
        }
        if let GdStep::Fixed(step) = self.gd_step {
            if !(step > 0.0) {
                return Err(Error::Config(format!("gradient step must be positive, got {step}")));
            }
        }
        match &self.w_mode {
            WMode::Prox { prox, .. } if !(prox.weight >= 0.0) => {
                Err(Error::Config(format!("prox weight must be non-negative, got {}", prox.weight)))
            }
            WMode::Denoiser { sigma, .. } if !(*sigma >= 0.0) => {
                Err(Error::Config(format!("denoiser sigma must be non-negative, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    /// Per-frame splitting transforms implied by the w-mode.
    pub fn transforms(&self, model: &SequenceModel) -> Result<Vec<LinOp>> {
        let n = model.state_dim();
        let op = match &self.w_mode {
            WMode::Prox { transform: TransformKind::FirstDifference, .. } => LinOp::first_difference(model.shape())?,
            _ => LinOp::identity(n),
        };
        Ok(vec![op; model.frames()])
    }
}

/// Iterates `(x, w, eta)` and the penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: FrameSequence,
    pub w: FrameSequence,
    pub eta: FrameSequence,
    pub rho: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// x-subproblem objective at the new x.
    pub phi: f64,
    /// `||w - W x||`.
    pub primal_residual: f64,
    /// `rho ||w^{k+1} - w^k||`.
    pub dual_residual: f64,
    pub frame_psnr: Option<Vec<f64>>,
    pub mean_psnr: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    /// Factorization or step-size estimation before the first iteration.
    pub setup_ms: f64,
    pub records: Vec<IterationRecord>,
}

impl SolveTrace {
    /// Setup plus update time, excluding the per-iteration diagnostics.
    pub fn solve_seconds(&self) -> f64 {
        (self.setup_ms + self.records.iter().map(|r| r.wall_ms).sum::<f64>()) / 1e3
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: FrameSequence,
    pub state: AdmmState,
    pub trace: SolveTrace,
    /// Smoother covariances of the last iteration, for the `ks` strategy.
    pub smoother: Option<SmootherOutput>,
}

/// `z = w + eta / rho`, the x-subproblem target.
pub fn compute_z_rho(state: &AdmmState) -> Result<FrameSequence> {
    state.w.axpy(1.0 / state.rho, &state.eta)
}

/// Proximal w-update evaluated at `W x - eta / rho`.
pub fn w_update_prox(state: &AdmmState, wx: &FrameSequence, prox_ops: &[ProxOp]) -> Result<FrameSequence> {
    check_dim("w_update_prox", wx.len(), prox_ops.len())?;
    let v = wx.axpy(-1.0 / state.rho, &state.eta)?;
    v.map_frames(v.shape(), |t, f| Ok(prox_ops[t].prox(f, 1.0 / state.rho)))
}

/// Plug-and-play w-update: `denoiser(x_t - eta_t / rho; sigma)` per frame.
pub fn w_update_denoiser(
    state: &AdmmState,
    x: &FrameSequence,
    denoiser: &Denoiser,
    sigma: f64,
) -> Result<FrameSequence> {
    x.check_conforming(&state.eta, "w_update_denoiser")?;
    let v = x.axpy(-1.0 / state.rho, &state.eta)?;
    v.map_frames(v.shape(), |_, f| denoiser.denoise(f, v.shape(), sigma))
}

/// `eta + rho (w - W x)`.
pub fn dual_update(state: &AdmmState, w: &FrameSequence, wx: &FrameSequence) -> Result<FrameSequence> {
    let gap = w.axpy(-1.0, wx)?;
    state.eta.axpy(state.rho, &gap)
}

/// `F(x) + prior + sum_t g_t(W_t x_t)` for a prox-mode problem.
pub fn merit(
    model: &SequenceModel,
    y: &FrameSequence,
    x: &FrameSequence,
    transforms: &[LinOp],
    prox_ops: &[ProxOp],
) -> Result<f64> {
    check_dim("merit transforms", model.frames(), transforms.len())?;
    check_dim("merit prox", model.frames(), prox_ops.len())?;
    let mut reg = 0.0;
    for (t, xt) in x.iter().enumerate() {
        reg += prox_ops[t].value(&transforms[t].apply(xt)?);
    }
    Ok(eval_F(model, y, x)? + eval_prior(model, x)? + reg)
}

fn apply_each(transforms: &[LinOp], x: &FrameSequence, shape: crate::operators::FrameShape) -> Result<FrameSequence> {
    x.map_frames(shape, |t, f| transforms[t].apply(f))
}

/// Initial state: backprojection or zeros, `w = W x`, `eta = 0`.
pub fn init_state(
    model: &SequenceModel,
    y: &FrameSequence,
    config: &SolverConfig,
    transforms: &[LinOp],
) -> Result<AdmmState> {
    let x = match config.init {
        Init::Zeros => FrameSequence::zeros(model.frames(), model.shape()),
        Init::Backprojection => y.map_frames(model.shape(), |t, yt| model.measurement(t).apply_adjoint(yt))?,
    };
    let w_shape = transforms[0].output_shape(model.shape());
    let w = apply_each(transforms, &x, w_shape)?;
    let eta = FrameSequence::zeros(model.frames(), w_shape);
    Ok(AdmmState { x, w, eta, rho: config.rho, k: 0 })
}

/// Runs ADMM with the transforms implied by `config`.
pub fn solve(
    model: &SequenceModel,
    y: &FrameSequence,
    config: &SolverConfig,
    truth: Option<&FrameSequence>,
) -> Result<SolveOutput> {
    let transforms = config.transforms(model)?;
    solve_with_transforms(model, y, config, &transforms, truth)
}

/// Runs ADMM with explicit per-frame splitting transforms (prox mode only).
pub fn solve_with_transforms(
    model: &SequenceModel,
    y: &FrameSequence,
    config: &SolverConfig,
    transforms: &[LinOp],
    truth: Option<&FrameSequence>,
) -> Result<SolveOutput> {
    config.validate()?;
    model.check_measurements(y, "solve")?;
    check_dim("solve transforms", model.frames(), transforms.len())?;
    let w_shape = transforms[0].output_shape(model.shape());
    for w in transforms {
        check_dim("solve transform input", model.state_dim(), w.input_dim())?;
        check_dim("solve transform output", w_shape.len(), w.output_dim())?;
    }
    if matches!(config.w_mode, WMode::Denoiser { .. }) && !transforms.iter().all(LinOp::is_identity) {
        return Err(Error::Config("denoiser mode requires identity transforms".into()));
    }
    if let Some(truth) = truth {
        model.check_states(truth, "solve truth")?;
    }

    let rho = config.rho;
    let setup = Instant::now();
    let mut state = init_state(model, y, config, transforms)?;
    let exact = match config.x_strategy {
        XStrategy::Exact => Some(ExactSolver::new(model, y, rho, transforms, config.exact_cap)?),
        _ => None,
    };
    let gd_step = match (config.x_strategy, config.gd_step) {
        (XStrategy::Gd, GdStep::Auto(AutoStep::Lipschitz)) => {
            let l = estimate_lipschitz(model, rho, transforms, LIPSCHITZ_POWER_ITERS)?;
            if !(l > 0.0) {
                return Err(Error::Config("Hessian estimate is not positive".into()));
            }
            1.0 / l
        }
        (_, GdStep::Fixed(step)) => step,
        _ => 1.0,
    };
    let prox_ops = match &config.w_mode {
        WMode::Prox { prox, .. } => vec![*prox; model.frames()],
        WMode::Denoiser { .. } => Vec::new(),
    };

    let mut trace = SolveTrace { setup_ms: setup.elapsed().as_secs_f64() * 1e3, records: Vec::new() };
    let mut smoother = None;
    for k in 0..config.max_iters {
        let start = Instant::now();
        let z = compute_z_rho(&state)?;
        let x = match config.x_strategy {
            XStrategy::Exact => exact.as_ref().expect("built above").solve(model, &z, transforms)?,
            XStrategy::Gd => gd_x_update(model, y, &state.x, &z, rho, transforms, gd_step)?,
            XStrategy::Cg => cg_x_update(model, y, &state.x, &z, rho, transforms, config.cg_iters)?,
            XStrategy::Ks => {
                let out = ks_x_update(model, y, &z, rho, transforms)?;
                let means = out.means.clone();
                smoother = Some(out);
                means
            }
        };
        let wx = apply_each(transforms, &x, w_shape)?;
        let w = match &config.w_mode {
            WMode::Prox { .. } => w_update_prox(&state, &wx, &prox_ops)?,
            WMode::Denoiser { denoiser, sigma } => w_update_denoiser(&state, &x, denoiser, *sigma)?,
        };
        let eta = dual_update(&state, &w, &wx)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;

        let phi = eval_phi(model, y, &x, &z, rho, transforms)?;
        let primal_residual = w.axpy(-1.0, &wx)?.norm();
        let dual_residual = rho * w.axpy(-1.0, &state.w)?.norm();
        let step = x.axpy(-1.0, &state.x)?.norm();
        let prev_norm = state.x.norm();
        let frame_psnr = truth.map(|t| frame_psnrs(&x, t)).transpose()?;
        let mean_psnr = frame_psnr.as_ref().map(|v| v.iter().sum::<f64>() / v.len() as f64);
        trace.records.push(IterationRecord {
            k,
            phi,
            primal_residual,
            dual_residual,
            frame_psnr,
            mean_psnr,
            wall_ms,
        });
        state = AdmmState { x, w, eta, rho, k: k + 1 };
        if config.stop_tol > 0.0 && step <= config.stop_tol * prev_norm {
            break;
        }
    }
    Ok(SolveOutput {
        x: state.x.clone(),
        state,
        trace,
        smoother,
    })
}
