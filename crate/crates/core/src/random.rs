//! Random problem instances for tests and benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::operators::{Covariance, FrameShape, LinOp};
use crate::ssm::{FrameSequence, SequenceModel};

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// Well-conditioned SPD matrix with a random overall scale.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let b = random_matrix(rng, n, n, 1.0);
    let scale = rng.random_range(0.2..2.0);
    let mut c = (&b * b.transpose()) / n as f64 + DMatrix::identity(n, n) * 0.3;
    c *= scale;
    // Exact symmetry.
    (&c + c.transpose()) * 0.5
}

pub fn random_covariance<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Covariance {
    Covariance::dense(random_spd(rng, n)).expect("random SPD factorizes")
}

/// Dense `H` (`m x n`) and `A`, dense SPD `R`, `Q`, `P_1`, random `m_1`,
/// each frame its own draw.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, frames: usize) -> SequenceModel {
    let h = (0..frames)
        .map(|_| LinOp::dense(random_matrix(rng, m, n, 1.0 / (n as f64).sqrt())))
        .collect();
    let r = (0..frames).map(|_| random_covariance(rng, m)).collect();
    let a = (1..frames)
        .map(|_| LinOp::dense(random_matrix(rng, n, n, 1.5 / (n as f64).sqrt())))
        .collect();
    let q = (1..frames).map(|_| random_covariance(rng, n)).collect();
    let m1 = random_vector(rng, n);
    let p1 = random_covariance(rng, n);
    SequenceModel::new(FrameShape::vector(n), h, r, a, q, m1, p1).expect("consistent random model")
}

pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_sequence<R: Rng + ?Sized>(rng: &mut R, frames: usize, shape: FrameShape) -> FrameSequence {
    let frames = (0..frames).map(|_| random_vector(rng, shape.len())).collect();
    FrameSequence::new(frames, shape).expect("non-empty sequence")
}
