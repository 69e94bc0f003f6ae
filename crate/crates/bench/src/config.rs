use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ksadmm_core::admm::SolverConfig;
use ksadmm_core::operators::{FrameShape, GaussianBlur};
use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurConfig {
    pub sigma_k: f64,
    /// Defaults to `ceil(3 sigma_k)`.
    #[serde(default)]
    pub radius: Option<usize>,
}

impl BlurConfig {
    pub fn radius(&self) -> usize {
        self.radius.unwrap_or_else(|| GaussianBlur::default_radius(self.sigma_k))
    }
}

fn default_p1_sigma() -> f64 {
    1.0
}

fn default_prior_mean() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Measurement noise standard deviation.
    pub r_sigma: f64,
    /// Process noise standard deviation.
    pub q_sigma: f64,
    #[serde(default = "default_p1_sigma")]
    pub p1_sigma: f64,
    /// Constant value of the first-frame prior mean.
    #[serde(default = "default_prior_mean")]
    pub prior_mean: f64,
}

fn default_shift() -> (isize, isize) {
    (1, 0)
}

fn default_repeats() -> usize {
    3
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Source image (PGM). A synthetic scene is generated when absent.
    #[serde(default)]
    pub image_source: Option<PathBuf>,
    /// Patch shapes as `[rows, cols]`.
    pub patch_sizes: Vec<(usize, usize)>,
    #[serde(rename = "T_values")]
    pub frame_counts: Vec<usize>,
    /// `(dx, dy)` per frame, in pixels along columns and rows.
    #[serde(default = "default_shift")]
    pub shift: (isize, isize),
    pub blur: BlurConfig,
    pub noise: NoiseConfig,
    pub solvers: Vec<SolverConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Timed runs per cell; the median is reported.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Run PSNR-trace strategies concurrently.
    #[serde(default)]
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.solvers.is_empty() {
            return bad("at least one solver is required".into());
        }
        let mut seen = HashSet::new();
        for s in &self.solvers {
            s.validate().map_err(|e| BenchError::Config(e.to_string()))?;
            if !seen.insert(s.x_strategy) {
                return bad(format!("strategy {} listed twice", s.x_strategy.name()));
            }
        }
        if self.patch_sizes.is_empty() || self.frame_counts.is_empty() {
            return bad("patch_sizes and T_values must be non-empty".into());
        }
        if self.frame_counts.contains(&0) {
            return bad("T_values must be positive".into());
        }
        if !(self.blur.sigma_k > 0.0) {
            return bad(format!("blur sigma_k must be positive, got {}", self.blur.sigma_k));
        }
        let r = self.blur.radius();
        for &(rows, cols) in &self.patch_sizes {
            if rows < 2 * r + 1 || cols < 2 * r + 1 {
                return bad(format!("patch {rows}x{cols} is smaller than the {0}x{0} blur kernel", 2 * r + 1));
            }
        }
        let n = &self.noise;
        if !(n.r_sigma > 0.0 && n.q_sigma > 0.0 && n.p1_sigma > 0.0) {
            return bad("noise standard deviations must be positive".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<FrameShape> {
        self.patch_sizes.iter().map(|&(r, c)| FrameShape::new(r, c)).collect()
    }

    /// Grid for the frame-count sweep under `--full`.
    pub fn full_t_grid(&mut self) {
        self.patch_sizes = vec![(64, 64)];
        self.frame_counts = vec![3, 5, 10, 15, 20, 100];
    }

    /// Grid for the patch-size sweep under `--full`.
    pub fn full_n_grid(&mut self) {
        self.patch_sizes = vec![(32, 32), (48, 48), (64, 64), (96, 96)];
        self.frame_counts = vec![5];
    }
}
