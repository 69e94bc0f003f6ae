//! Linear-Gaussian state-space model.
//!
//! ```text
//! y_t = H_t x_t + r_t,        r_t ~ N(0, R_t),   t = 1..T
//! x_t = A_t x_{t-1} + q_t,    q_t ~ N(0, Q_t),   t = 2..T
//! x_1 ~ N(m_1, P_1)
//! ```
//!
//! Frames are indexed from zero in code: frame `t` here is frame `t + 1` of
//! the model above, and `transition(t)` maps frame `t - 1` to frame `t`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::operators::{mahalanobis_sq, Covariance, FrameShape, LinOp};
use crate::pgm::GrayImage;

/// `T` frames of equal length with a shared 2D layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<DVector<f64>>,
    shape: FrameShape,
}

impl FrameSequence {
    pub fn new(frames: Vec<DVector<f64>>, shape: FrameShape) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidShape("frame sequence needs at least one frame".into()));
        }
        for f in &frames {
            check_dim("FrameSequence::new", shape.len(), f.len())?;
        }
        Ok(Self { frames, shape })
    }

    pub fn zeros(len: usize, shape: FrameShape) -> Self {
        Self {
            frames: vec![DVector::zeros(shape.len()); len.max(1)],
            shape,
        }
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.shape.len()
    }

    pub fn frames(&self) -> &[DVector<f64>] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.frames
    }

    pub fn into_frames(self) -> Vec<DVector<f64>> {
        self.frames
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.frames.iter()
    }

    /// All frames concatenated in time order.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.frame_len();
        DVector::from_iterator(
            n * self.len(),
            self.frames.iter().flat_map(|f| f.iter().copied()),
        )
    }

    pub fn from_stacked(v: &DVector<f64>, len: usize, shape: FrameShape) -> Result<Self> {
        check_dim("FrameSequence::from_stacked", len * shape.len(), v.len())?;
        let n = shape.len();
        let frames = (0..len)
            .map(|t| v.rows(t * n, n).into_owned())
            .collect();
        Self::new(frames, shape)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Result<Self> {
        self.check_conforming(other, "FrameSequence::axpy")?;
        Ok(Self {
            frames: self
                .frames
                .iter()
                .zip(&other.frames)
                .map(|(a, b)| a + b * alpha)
                .collect(),
            shape: self.shape,
        })
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            frames: self.frames.iter().map(|f| f * alpha).collect(),
            shape: self.shape,
        }
    }

    /// Applies `f` to every frame, producing frames of `shape`.
    pub fn map_frames<F>(&self, shape: FrameShape, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &DVector<f64>) -> Result<DVector<f64>>,
    {
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(t, x)| f(t, x))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, shape)
    }

    pub(crate) fn check_conforming(&self, other: &Self, context: &'static str) -> Result<()> {
        check_dim(context, self.len(), other.len())?;
        check_dim(context, self.frame_len(), other.frame_len())
    }
}

/// Operators and covariances of a linear-Gaussian state-space model.
#[derive(Debug, Clone)]
pub struct SequenceModel {
    shape: FrameShape,
    measurement_ops: Vec<LinOp>,
    measurement_covs: Vec<Covariance>,
    transition_ops: Vec<LinOp>,
    process_covs: Vec<Covariance>,
    prior_mean: DVector<f64>,
    prior_cov: Covariance,
}

impl SequenceModel {
    /// `transition_ops` and `process_covs` hold `T - 1` entries, for frames `2..=T`.
    pub fn new(
        shape: FrameShape,
        measurement_ops: Vec<LinOp>,
        measurement_covs: Vec<Covariance>,
        transition_ops: Vec<LinOp>,
        process_covs: Vec<Covariance>,
        prior_mean: DVector<f64>,
        prior_cov: Covariance,
    ) -> Result<Self> {
        let n = shape.len();
        let t = measurement_ops.len();
        if t == 0 {
            return Err(Error::InvalidShape("model needs at least one frame".into()));
        }
        check_dim("SequenceModel measurement covariances", t, measurement_covs.len())?;
        check_dim("SequenceModel transitions", t - 1, transition_ops.len())?;
        check_dim("SequenceModel process covariances", t - 1, process_covs.len())?;
        for (h, r) in measurement_ops.iter().zip(&measurement_covs) {
            check_dim("SequenceModel H input", n, h.input_dim())?;
            check_dim("SequenceModel R", h.output_dim(), r.dim())?;
        }
        for (a, q) in transition_ops.iter().zip(&process_covs) {
            check_dim("SequenceModel A input", n, a.input_dim())?;
            check_dim("SequenceModel A output", n, a.output_dim())?;
            check_dim("SequenceModel Q", n, q.dim())?;
        }
        check_dim("SequenceModel m1", n, prior_mean.len())?;
        check_dim("SequenceModel P1", n, prior_cov.dim())?;
        Ok(Self {
            shape,
            measurement_ops,
            measurement_covs,
            transition_ops,
            process_covs,
            prior_mean,
            prior_cov,
        })
    }

    /// Same `H`, `R`, `A`, `Q` at every frame.
    #[allow(clippy::too_many_arguments)]
    pub fn stationary(
        frames: usize,
        shape: FrameShape,
        h: LinOp,
        r: Covariance,
        a: LinOp,
        q: Covariance,
        prior_mean: DVector<f64>,
        prior_cov: Covariance,
    ) -> Result<Self> {
        let frames = frames.max(1);
        Self::new(
            shape,
            vec![h; frames],
            vec![r; frames],
            vec![a; frames - 1],
            vec![q; frames - 1],
            prior_mean,
            prior_cov,
        )
    }

    pub fn frames(&self) -> usize {
        self.measurement_ops.len()
    }

    pub fn state_dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn measurement(&self, t: usize) -> &LinOp {
        &self.measurement_ops[t]
    }

    pub fn measurement_cov(&self, t: usize) -> &Covariance {
        &self.measurement_covs[t]
    }

    /// `A` mapping frame `t - 1` to frame `t`; `t >= 1`.
    pub fn transition(&self, t: usize) -> &LinOp {
        &self.transition_ops[t - 1]
    }

    /// `Q` of frame `t`; `t >= 1`.
    pub fn process_cov(&self, t: usize) -> &Covariance {
        &self.process_covs[t - 1]
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    pub fn prior_cov(&self) -> &Covariance {
        &self.prior_cov
    }

    /// Covariance of frame `t` in the stacked residual `Psi x - m`:
    /// `P_1` for the first frame, `Q_t` afterwards.
    pub fn stacked_cov(&self, t: usize) -> &Covariance {
        if t == 0 {
            &self.prior_cov
        } else {
            self.process_cov(t)
        }
    }

    pub fn measurement_shape(&self, t: usize) -> FrameShape {
        self.measurement_ops[t].output_shape(self.shape)
    }

    pub(crate) fn check_states(&self, x: &FrameSequence, context: &'static str) -> Result<()> {
        check_dim(context, self.frames(), x.len())?;
        check_dim(context, self.state_dim(), x.frame_len())
    }

    pub(crate) fn check_measurements(&self, y: &FrameSequence, context: &'static str) -> Result<()> {
        check_dim(context, self.frames(), y.len())?;
        for (t, f) in y.iter().enumerate() {
            check_dim(context, self.measurement_ops[t].output_dim(), f.len())?;
        }
        Ok(())
    }
}

/// Draws `(truth, measurements)` with `x_1 ~ N(m_1, P_1)`.
pub fn simulate(model: &SequenceModel, seed: u64) -> Result<(FrameSequence, FrameSequence)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1 = model.prior_mean() + model.prior_cov().sample(&mut rng);
    simulate_with(model, x1, &mut rng)
}

/// Like [`simulate`] but starting from a fixed first frame.
pub fn simulate_from(
    model: &SequenceModel,
    first: DVector<f64>,
    seed: u64,
) -> Result<(FrameSequence, FrameSequence)> {
    check_dim("simulate_from", model.state_dim(), first.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with(model, first, &mut rng)
}

fn simulate_with(
    model: &SequenceModel,
    first: DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(FrameSequence, FrameSequence)> {
    let mut states = Vec::with_capacity(model.frames());
    states.push(first);
    for t in 1..model.frames() {
        let next = model.transition(t).apply(&states[t - 1])? + model.process_cov(t).sample(rng);
        states.push(next);
    }
    let truth = FrameSequence::new(states, model.shape())?;
    let y = observe_with(model, &truth, rng)?;
    Ok((truth, y))
}

/// Measures a given state sequence: `y_t = H_t x_t + r_t`.
pub fn observe(model: &SequenceModel, truth: &FrameSequence, seed: u64) -> Result<FrameSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    observe_with(model, truth, &mut rng)
}

fn observe_with(
    model: &SequenceModel,
    truth: &FrameSequence,
    rng: &mut ChaCha8Rng,
) -> Result<FrameSequence> {
    model.check_states(truth, "observe")?;
    let frames = truth
        .iter()
        .enumerate()
        .map(|(t, x)| Ok(model.measurement(t).apply(x)? + model.measurement_cov(t).sample(rng)))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, model.measurement_shape(0))
}

/// Crops `frames` patches of `patch` size, the `t`-th at offset `t * (dx, dy)`
/// where `dx` moves along columns and `dy` along rows.
///
/// Images with values outside `[0, 1]` are min-max normalized first.
pub fn shifted_patch_sequence(
    image: &GrayImage,
    patch: FrameShape,
    frames: usize,
    shift: (isize, isize),
) -> Result<FrameSequence> {
    if frames == 0 || patch.is_empty() {
        return Err(Error::InvalidShape("need at least one non-empty patch".into()));
    }
    let src = image.shape();
    let pixels = image.pixels();
    let (lo, hi) = pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let normalize = lo < 0.0 || hi > 1.0;
    let scale = |p: f64| {
        if normalize {
            if hi > lo {
                (p - lo) / (hi - lo)
            } else {
                0.0
            }
        } else {
            p
        }
    };
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let col0 = t as isize * shift.0;
        let row0 = t as isize * shift.1;
        if col0 < 0
            || row0 < 0
            || col0 as usize + patch.cols > src.cols
            || row0 as usize + patch.rows > src.rows
        {
            return Err(Error::InvalidShape(format!(
                "patch {t} at ({row0}, {col0}) exits the {}x{} image",
                src.rows, src.cols
            )));
        }
        let (row0, col0) = (row0 as usize, col0 as usize);
        let frame = DVector::from_iterator(
            patch.len(),
            (0..patch.rows).flat_map(|i| {
                (0..patch.cols).map(move |j| scale(pixels[(row0 + i) * src.cols + col0 + j]))
            }),
        );
        out.push(frame);
    }
    FrameSequence::new(out, patch)
}

/// `Psi x = (x_1, x_2 - A_2 x_1, ..., x_T - A_T x_{T-1})`.
pub fn apply_psi(model: &SequenceModel, x: &FrameSequence) -> Result<FrameSequence> {
    model.check_states(x, "apply_psi")?;
    let f = x.frames();
    x.map_frames(x.shape(), |t, xt| {
        if t == 0 {
            Ok(xt.clone())
        } else {
            Ok(xt - model.transition(t).apply(&f[t - 1])?)
        }
    })
}

/// `Psi^T v`: frame `t` is `v_t - A_{t+1}^T v_{t+1}`.
pub fn apply_psi_adjoint(model: &SequenceModel, v: &FrameSequence) -> Result<FrameSequence> {
    model.check_states(v, "apply_psi_adjoint")?;
    let f = v.frames();
    let last = v.len() - 1;
    v.map_frames(v.shape(), |t, vt| {
        if t == last {
            Ok(vt.clone())
        } else {
            Ok(vt - model.transition(t + 1).apply_adjoint(&f[t + 1])?)
        }
    })
}

/// Data fidelity `F`: measurement and dynamics Mahalanobis terms.
#[allow(non_snake_case)]
pub fn eval_F(model: &SequenceModel, y: &FrameSequence, x: &FrameSequence) -> Result<f64> {
    model.check_states(x, "eval_F")?;
    model.check_measurements(y, "eval_F")?;
    let mut total = 0.0;
    for t in 0..model.frames() {
        let residual = &y.frames()[t] - model.measurement(t).apply(&x.frames()[t])?;
        total += mahalanobis_sq(&residual, model.measurement_cov(t))?;
        if t > 0 {
            let innovation = &x.frames()[t] - model.transition(t).apply(&x.frames()[t - 1])?;
            total += mahalanobis_sq(&innovation, model.process_cov(t))?;
        }
    }
    Ok(0.5 * total)
}

/// `1/2 ||x_1 - m_1||^2` in the `P_1^{-1}` metric.
pub fn eval_prior(model: &SequenceModel, x: &FrameSequence) -> Result<f64> {
    model.check_states(x, "eval_prior")?;
    let d = &x.frames()[0] - model.prior_mean();
    Ok(0.5 * mahalanobis_sq(&d, model.prior_cov())?)
}

/// The x-subproblem objective
/// `F(x) + 1/2 ||x_1 - m_1||^2_{P_1^{-1}} + rho/2 ||W x - z||^2`.
///
/// `rho = 0` drops the coupling term.
pub fn eval_phi(
    model: &SequenceModel,
    y: &FrameSequence,
    x: &FrameSequence,
    z: &FrameSequence,
    rho: f64,
    transforms: &[LinOp],
) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::Config(format!("rho must be non-negative, got {rho}")));
    }
    check_dim("eval_phi transforms", model.frames(), transforms.len())?;
    check_dim("eval_phi z", model.frames(), z.len())?;
    let mut coupling = 0.0;
    for (t, w) in transforms.iter().enumerate() {
        let d = w.apply(&x.frames()[t])? - &z.frames()[t];
        coupling += d.norm_squared();
    }
    Ok(eval_F(model, y, x)? + eval_prior(model, x)? + 0.5 * rho * coupling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_model, random_sequence};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn identity_model(frames: usize, n: usize, r_var: f64, q_var: f64) -> SequenceModel {
        SequenceModel::stationary(
            frames,
            FrameShape::vector(n),
            LinOp::identity(n),
            Covariance::scaled_identity(n, r_var).unwrap(),
            LinOp::identity(n),
            Covariance::scaled_identity(n, q_var).unwrap(),
            DVector::from_element(n, 0.5),
            Covariance::identity(n),
        )
        .unwrap()
    }

    #[test]
    fn model_validation() {
        let n = 3;
        let bad = SequenceModel::new(
            FrameShape::vector(n),
            vec![LinOp::identity(n); 2],
            vec![Covariance::identity(n); 2],
            vec![],
            vec![],
            DVector::zeros(n),
            Covariance::identity(n),
        );
        assert!(bad.is_err());
        let bad = SequenceModel::stationary(
            2,
            FrameShape::vector(n),
            LinOp::identity(n),
            Covariance::identity(4),
            LinOp::identity(n),
            Covariance::identity(n),
            DVector::zeros(n),
            Covariance::identity(n),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn noiseless_identity_dynamics() {
        let n = 4;
        let h = LinOp::dense(DMatrix::from_fn(3, n, |i, j| (i + 2 * j) as f64));
        let model = SequenceModel::stationary(
            5,
            FrameShape::vector(n),
            h.clone(),
            Covariance::scaled_identity(3, 0.0).unwrap(),
            LinOp::identity(n),
            Covariance::scaled_identity(n, 0.0).unwrap(),
            DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]),
            Covariance::identity(n),
        )
        .unwrap();
        let (truth, y) = simulate_from(&model, model.prior_mean().clone(), 9).unwrap();
        let expected = h.apply(model.prior_mean()).unwrap();
        for (x, yt) in truth.iter().zip(y.iter()) {
            assert_eq!(x, model.prior_mean());
            assert_eq!(yt, &expected);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let model = identity_model(4, 6, 0.1, 0.2);
        let a = simulate(&model, 42).unwrap();
        let b = simulate(&model, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, 43).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn measurement_noise_mean_is_small() {
        let draws = 100_000;
        let sigma = 0.3;
        let model = identity_model(1, 2, sigma * sigma, 1.0);
        let truth = FrameSequence::zeros(1, FrameShape::vector(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sum = DVector::zeros(2);
        for _ in 0..draws {
            sum += &observe_with(&model, &truth, &mut rng).unwrap().frames()[0];
        }
        let mean = sum / draws as f64;
        let bound = 4.0 * sigma / (draws as f64).sqrt();
        assert!(mean.iter().all(|m| m.abs() <= bound), "{mean}");
    }

    #[test]
    fn shifted_patches() {
        let ramp = GrayImage::new(FrameShape::new(4, 4), (0..16).map(|v| v as f64 / 15.0).collect())
            .unwrap();
        let seq = shifted_patch_sequence(&ramp, FrameShape::new(2, 2), 3, (1, 0)).unwrap();
        let expect = |a: [usize; 4]| DVector::from_iterator(4, a.iter().map(|&v| v as f64 / 15.0));
        assert_eq!(seq.frames()[0], expect([0, 1, 4, 5]));
        assert_eq!(seq.frames()[1], expect([1, 2, 5, 6]));
        assert_eq!(seq.frames()[2], expect([2, 3, 6, 7]));

        let still = shifted_patch_sequence(&ramp, FrameShape::new(2, 3), 4, (0, 0)).unwrap();
        assert!(still.iter().all(|f| f == &still.frames()[0]));
        let single = shifted_patch_sequence(&ramp, FrameShape::new(3, 3), 1, (5, 5)).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.frames()[0][4], 5.0 / 15.0);

        assert!(shifted_patch_sequence(&ramp, FrameShape::new(2, 2), 4, (1, 0)).is_err());
        assert!(shifted_patch_sequence(&ramp, FrameShape::new(2, 2), 2, (0, -1)).is_err());

        // Out-of-range images are normalized.
        let raw = GrayImage::new(FrameShape::new(1, 3), vec![10.0, 20.0, 30.0]).unwrap();
        let seq = shifted_patch_sequence(&raw, FrameShape::new(1, 3), 1, (0, 0)).unwrap();
        assert_eq!(seq.frames()[0].as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn psi_examples() {
        let model = identity_model(4, 3, 1.0, 1.0);
        let c = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let constant = FrameSequence::new(vec![c.clone(); 4], model.shape()).unwrap();
        let psi = apply_psi(&model, &constant).unwrap();
        assert_eq!(psi.frames()[0], c);
        assert!(psi.frames()[1..].iter().all(|f| f.amax() == 0.0));

        let mut v = FrameSequence::zeros(4, model.shape());
        v.frames_mut()[3] = c.clone();
        let adj = apply_psi_adjoint(&model, &v).unwrap();
        assert_eq!(adj.frames()[0].amax(), 0.0);
        assert_eq!(adj.frames()[1].amax(), 0.0);
        assert_eq!(adj.frames()[2], -&c);
        assert_eq!(adj.frames()[3], c);

        let single = identity_model(1, 3, 1.0, 1.0);
        let x = FrameSequence::new(vec![c.clone()], single.shape()).unwrap();
        assert_eq!(apply_psi(&single, &x).unwrap(), x);
        assert_eq!(apply_psi_adjoint(&single, &x).unwrap(), x);
    }

    fn dense_psi(model: &SequenceModel) -> DMatrix<f64> {
        let (n, t) = (model.state_dim(), model.frames());
        let mut m = DMatrix::identity(n * t, n * t);
        for k in 1..t {
            let a = model.transition(k).to_dense();
            m.view_mut((k * n, (k - 1) * n), (n, n)).copy_from(&(-a));
        }
        m
    }

    #[test]
    fn psi_matches_block_bidiagonal_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let model = random_model(&mut rng, 5, 3, 4);
            let x = random_sequence(&mut rng, 4, model.shape());
            let v = random_sequence(&mut rng, 4, model.shape());
            let psi = dense_psi(&model);
            let fast = apply_psi(&model, &x).unwrap().stacked();
            assert!((fast - &psi * x.stacked()).amax() < 1e-12);
            let adj = apply_psi_adjoint(&model, &v).unwrap();
            assert!((adj.stacked() - psi.transpose() * v.stacked()).amax() < 1e-12);
            let lhs = apply_psi(&model, &x).unwrap().dot(&v);
            let rhs = x.dot(&adj);
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn fidelity_examples() {
        let model = identity_model(3, 4, 0.0, 0.0);
        let (truth, y) = simulate_from(&model, DVector::from_element(4, 0.3), 1).unwrap();
        // Zero noise covariances are rejected during evaluation.
        assert!(eval_F(&model, &y, &truth).is_err());

        let model = identity_model(3, 4, 0.5, 0.5);
        assert_eq!(eval_F(&model, &y, &truth).unwrap(), 0.0);

        let single = identity_model(1, 2, 2.0, 1.0);
        let y = FrameSequence::new(vec![DVector::from_vec(vec![1.0, 3.0])], single.shape()).unwrap();
        let x = FrameSequence::zeros(1, single.shape());
        assert!((eval_F(&single, &y, &x).unwrap() - 0.5 * 10.0 / 2.0).abs() < 1e-15);
    }

    /// Stacked dense evaluation of F, the prior and the coupling term.
    fn dense_phi(
        model: &SequenceModel,
        y: &FrameSequence,
        x: &FrameSequence,
        z: &FrameSequence,
        rho: f64,
        w: &[LinOp],
    ) -> f64 {
        let mut total = 0.0;
        let xs = x.stacked();
        let psi = dense_psi(model);
        let n = model.state_dim();
        let mut m = DVector::zeros(xs.len());
        m.rows_mut(0, n).copy_from(model.prior_mean());
        let r = &psi * &xs - m;
        for (t, wt) in w.iter().enumerate() {
            let qt = model.stacked_cov(t).to_dense();
            let rt = r.rows(t * n, n).into_owned();
            total += rt.dot(&qt.lu().solve(&rt).unwrap());
            let h = model.measurement(t).to_dense();
            let e = &y.frames()[t] - &h * &x.frames()[t];
            let rc = model.measurement_cov(t).to_dense();
            total += e.dot(&rc.lu().solve(&e).unwrap());
            let d = wt.to_dense() * &x.frames()[t] - &z.frames()[t];
            total += rho * d.norm_squared();
        }
        0.5 * total
    }

    #[test]
    fn phi_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let t = rng.random_range(1..5);
            let model = random_model(&mut rng, 5, 4, t);
            let w = vec![LinOp::first_difference(model.shape()).unwrap(); t];
            let x = random_sequence(&mut rng, t, model.shape());
            let y = random_sequence(&mut rng, t, FrameShape::vector(4));
            let z = random_sequence(&mut rng, t, w[0].output_shape(model.shape()));
            let rho = rng.random_range(0.1..3.0);
            let got = eval_phi(&model, &y, &x, &z, rho, &w).unwrap();
            let want = dense_phi(&model, &y, &x, &z, rho, &w);
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
            assert!(got >= 0.0);
            let no_coupling = eval_phi(&model, &y, &x, &z, 0.0, &w).unwrap();
            let parts = eval_F(&model, &y, &x).unwrap() + eval_prior(&model, &x).unwrap();
            assert!((no_coupling - parts).abs() <= 1e-12 * parts.max(1.0));
        }
    }

    #[test]
    fn phi_vanishes_at_consistent_point() {
        let model = identity_model(3, 4, 0.3, 0.3);
        let x = FrameSequence::new(vec![model.prior_mean().clone(); 3], model.shape()).unwrap();
        let y = x.clone();
        let w = vec![LinOp::identity(4); 3];
        let phi = eval_phi(&model, &y, &x, &x, 1.7, &w).unwrap();
        assert_eq!(phi, 0.0);
    }
}
