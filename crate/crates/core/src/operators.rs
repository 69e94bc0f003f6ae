//! Linear operators and covariances.
//!
//! [`LinOp`] covers the measurement, transition and transform operators of
//! the state-space model. Structured kinds (identity, zero-padded Gaussian
//! blur, forward differences) apply matrix-free; every kind can also be
//! materialized with [`LinOp::to_dense`], which is built entry-by-entry from
//! the operator definition rather than by probing the fast path.
//!
//! [`Covariance`] holds either a scaled identity or a dense SPD matrix with
//! its Cholesky factor cached at construction. All inverse applications go
//! through that factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{at_b, cholesky_solve};

/// Row-major 2D frame layout. `rows` is the image height, `cols` the width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameShape {
    pub rows: usize,
    pub cols: usize,
}

impl FrameShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    /// Column-vector layout for frames with no spatial meaning.
    pub fn vector(len: usize) -> Self {
        Self { rows: len, cols: 1 }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Separable, truncated, unit-sum Gaussian blur with zero boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlur {
    sigma: f64,
    radius: usize,
    shape: FrameShape,
    /// 1D taps at offsets `-radius..=radius`.
    taps: Vec<f64>,
}

impl GaussianBlur {
    pub fn new(sigma: f64, radius: usize, shape: FrameShape) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidShape(format!(
                "blur sigma must be positive, got {sigma}"
            )));
        }
        let window = 2 * radius + 1;
        if shape.rows < window || shape.cols < window {
            return Err(Error::InvalidShape(format!(
                "frame {}x{} smaller than blur window {window}",
                shape.rows, shape.cols
            )));
        }
        Ok(Self {
            sigma,
            radius,
            shape,
            taps: gaussian_taps(sigma, radius),
        })
    }

    /// Truncation radius used when none is given: `ceil(3 sigma)`.
    pub fn default_radius(sigma: f64) -> usize {
        (3.0 * sigma).ceil().max(0.0) as usize
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    fn apply_slice(&self, input: &[f64], out: &mut [f64], flip: bool) {
        let FrameShape { rows, cols } = self.shape;
        let r = self.radius as isize;
        let tap = |k: isize| -> f64 {
            let k = if flip { -k } else { k };
            self.taps[(k + r) as usize]
        };
        let mut tmp = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &input[i * cols..(i + 1) * cols];
            for j in 0..cols {
                let lo = (-r).max(-(j as isize));
                let hi = r.min(cols as isize - 1 - j as isize);
                let mut acc = 0.0;
                for k in lo..=hi {
                    acc += tap(k) * row[(j as isize + k) as usize];
                }
                tmp[i * cols + j] = acc;
            }
        }
        for i in 0..rows {
            let lo = (-r).max(-(i as isize));
            let hi = r.min(rows as isize - 1 - i as isize);
            let dst = &mut out[i * cols..(i + 1) * cols];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for k in lo..=hi {
                let w = tap(k);
                let src = &tmp[(i as isize + k) as usize * cols..][..cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}

fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// A linear map between real vector spaces.
#[derive(Debug, Clone, PartialEq)]
pub enum LinOp {
    Dense(DMatrix<f64>),
    Identity(usize),
    GaussianBlur(GaussianBlur),
    /// Horizontal then vertical forward differences, zero at the last
    /// column/row. Output length is twice the input length.
    FirstDifference(FrameShape),
}

impl LinOp {
    pub fn dense(matrix: DMatrix<f64>) -> Self {
        LinOp::Dense(matrix)
    }

    pub fn identity(dim: usize) -> Self {
        LinOp::Identity(dim)
    }

    pub fn gaussian_blur(sigma: f64, radius: usize, shape: FrameShape) -> Result<Self> {
        Ok(LinOp::GaussianBlur(GaussianBlur::new(sigma, radius, shape)?))
    }

    pub fn first_difference(shape: FrameShape) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidShape("empty frame".into()));
        }
        Ok(LinOp::FirstDifference(shape))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            LinOp::Dense(m) => m.ncols(),
            LinOp::Identity(n) => *n,
            LinOp::GaussianBlur(b) => b.shape.len(),
            LinOp::FirstDifference(s) => s.len(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            LinOp::Dense(m) => m.nrows(),
            LinOp::Identity(n) => *n,
            LinOp::GaussianBlur(b) => b.shape.len(),
            LinOp::FirstDifference(s) => 2 * s.len(),
        }
    }

    /// Shape of the output frame given the input frame shape.
    pub fn output_shape(&self, input: FrameShape) -> FrameShape {
        match self {
            LinOp::Identity(_) | LinOp::GaussianBlur(_) => input,
            LinOp::FirstDifference(s) => FrameShape::new(2 * s.rows, s.cols),
            LinOp::Dense(m) => {
                if m.nrows() == input.len() {
                    input
                } else {
                    FrameShape::vector(m.nrows())
                }
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, LinOp::Identity(_))
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("LinOp::apply", self.input_dim(), v.len())?;
        let mut out = DVector::zeros(self.output_dim());
        self.forward_slice(v.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    pub fn apply_adjoint(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("LinOp::apply_adjoint", self.output_dim(), u.len())?;
        let mut out = DVector::zeros(self.input_dim());
        self.adjoint_slice(u.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `op * m`, column by column for structured kinds.
    pub fn apply_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("LinOp::apply_columns", self.input_dim(), m.nrows())?;
        Ok(match self {
            LinOp::Dense(a) => a * m,
            LinOp::Identity(_) => m.clone(),
            _ => {
                let mut out = DMatrix::zeros(self.output_dim(), m.ncols());
                for j in 0..m.ncols() {
                    let src = m.column(j);
                    let mut dst = out.column_mut(j);
                    self.forward_slice(src.as_slice(), dst.as_mut_slice());
                }
                out
            }
        })
    }

    /// `op^T * m`, column by column for structured kinds.
    pub fn adjoint_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("LinOp::adjoint_columns", self.output_dim(), m.nrows())?;
        Ok(match self {
            LinOp::Dense(a) => at_b(a, m),
            LinOp::Identity(_) => m.clone(),
            _ => {
                let mut out = DMatrix::zeros(self.input_dim(), m.ncols());
                for j in 0..m.ncols() {
                    let src = m.column(j);
                    let mut dst = out.column_mut(j);
                    self.adjoint_slice(src.as_slice(), dst.as_mut_slice());
                }
                out
            }
        })
    }

    /// Dense materialization built from the operator definition.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            LinOp::Dense(m) => m.clone(),
            LinOp::Identity(n) => DMatrix::identity(*n, *n),
            LinOp::GaussianBlur(b) => {
                let FrameShape { rows, cols } = b.shape;
                let r = b.radius as isize;
                let n = rows * cols;
                let mut m = DMatrix::zeros(n, n);
                for i in 0..rows as isize {
                    for j in 0..cols as isize {
                        for di in -r..=r {
                            for dj in -r..=r {
                                let (ii, jj) = (i + di, j + dj);
                                if ii < 0 || jj < 0 || ii >= rows as isize || jj >= cols as isize {
                                    continue;
                                }
                                let w = b.taps[(di + r) as usize] * b.taps[(dj + r) as usize];
                                m[(
                                    (i as usize) * cols + j as usize,
                                    (ii as usize) * cols + jj as usize,
                                )] = w;
                            }
                        }
                    }
                }
                m
            }
            LinOp::FirstDifference(s) => {
                let n = s.len();
                let mut m = DMatrix::zeros(2 * n, n);
                for i in 0..s.rows {
                    for j in 0..s.cols {
                        let p = i * s.cols + j;
                        if j + 1 < s.cols {
                            m[(p, p)] = -1.0;
                            m[(p, p + 1)] = 1.0;
                        }
                        if i + 1 < s.rows {
                            m[(n + p, p)] = -1.0;
                            m[(n + p, p + s.cols)] = 1.0;
                        }
                    }
                }
                m
            }
        }
    }

    pub(crate) fn forward_slice(&self, v: &[f64], out: &mut [f64]) {
        match self {
            LinOp::Dense(m) => {
                let res = m * DVector::from_column_slice(v);
                out.copy_from_slice(res.as_slice());
            }
            LinOp::Identity(_) => out.copy_from_slice(v),
            LinOp::GaussianBlur(b) => b.apply_slice(v, out, false),
            LinOp::FirstDifference(s) => {
                let n = s.len();
                let (h, vert) = out.split_at_mut(n);
                for i in 0..s.rows {
                    for j in 0..s.cols {
                        let p = i * s.cols + j;
                        h[p] = if j + 1 < s.cols { v[p + 1] - v[p] } else { 0.0 };
                        vert[p] = if i + 1 < s.rows {
                            v[p + s.cols] - v[p]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }

    pub(crate) fn adjoint_slice(&self, u: &[f64], out: &mut [f64]) {
        match self {
            LinOp::Dense(m) => {
                let res = m.tr_mul(&DVector::from_column_slice(u));
                out.copy_from_slice(res.as_slice());
            }
            LinOp::Identity(_) => out.copy_from_slice(u),
            LinOp::GaussianBlur(b) => b.apply_slice(u, out, true),
            LinOp::FirstDifference(s) => {
                let n = s.len();
                let (h, vert) = u.split_at(n);
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..s.rows {
                    for j in 0..s.cols {
                        let p = i * s.cols + j;
                        if j + 1 < s.cols {
                            out[p + 1] += h[p];
                            out[p] -= h[p];
                        }
                        if i + 1 < s.rows {
                            out[p + s.cols] += vert[p];
                            out[p] -= vert[p];
                        }
                    }
                }
            }
        }
    }
}

/// Gaussian noise covariance.
#[derive(Debug, Clone)]
pub enum Covariance {
    /// `variance * I`. A zero variance is accepted for noiseless simulation
    /// only; every inverse application rejects it.
    ScaledIdentity { dim: usize, variance: f64 },
    Dense {
        matrix: DMatrix<f64>,
        factor: Cholesky<f64, Dyn>,
    },
}

impl Covariance {
    pub fn scaled_identity(dim: usize, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "scaled identity with variance {variance}"
            )));
        }
        Ok(Covariance::ScaledIdentity { dim, variance })
    }

    pub fn identity(dim: usize) -> Self {
        Covariance::ScaledIdentity { dim, variance: 1.0 }
    }

    /// Dense SPD covariance. Rejects asymmetric input and failed factorizations.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidShape(format!(
                "covariance must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.amax();
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "covariance asymmetric by {asym:e}"
            )));
        }
        let factor = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        Ok(Covariance::Dense { matrix, factor })
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::ScaledIdentity { dim, .. } => *dim,
            Covariance::Dense { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        match self {
            Covariance::ScaledIdentity { variance, .. } => *variance > 0.0,
            Covariance::Dense { .. } => true,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::ScaledIdentity { dim, variance } => {
                DMatrix::from_diagonal_element(*dim, *dim, *variance)
            }
            Covariance::Dense { matrix, .. } => matrix.clone(),
        }
    }

    /// `C^{-1} v`.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("Covariance::solve", self.dim(), v.len())?;
        match self {
            Covariance::ScaledIdentity { variance, .. } => {
                if *variance <= 0.0 {
                    return Err(Error::NotPositiveDefinite("zero-variance covariance".into()));
                }
                Ok(v / *variance)
            }
            Covariance::Dense { factor, .. } => Ok(factor.solve(v)),
        }
    }

    /// `C^{-1} M`.
    pub fn solve_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("Covariance::solve_matrix", self.dim(), m.nrows())?;
        match self {
            Covariance::ScaledIdentity { variance, .. } => {
                if *variance <= 0.0 {
                    return Err(Error::NotPositiveDefinite("zero-variance covariance".into()));
                }
                Ok(m / *variance)
            }
            Covariance::Dense { factor, .. } => Ok(cholesky_solve(factor, m)),
        }
    }

    /// `m += C`.
    pub fn add_to(&self, m: &mut DMatrix<f64>) {
        match self {
            Covariance::ScaledIdentity { variance, .. } => {
                for i in 0..m.nrows() {
                    m[(i, i)] += *variance;
                }
            }
            Covariance::Dense { matrix, .. } => *m += matrix,
        }
    }

    /// A zero-mean draw with this covariance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let white = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        match self {
            Covariance::ScaledIdentity { variance, .. } => white * variance.sqrt(),
            Covariance::Dense { factor, .. } => factor.l() * white,
        }
    }
}

/// `v^T C^{-1} v`, through the Cholesky factor.
pub fn mahalanobis_sq(v: &DVector<f64>, c: &Covariance) -> Result<f64> {
    let solved = c.solve(v)?;
    Ok(v.dot(&solved).max(0.0))
}
