use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::ssm::FrameSequence;

/// Reported PSNR when the two frames are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

/// `10 log10(max^2 / MSE)` in dB.
pub fn psnr(estimate: &DVector<f64>, truth: &DVector<f64>, max_val: f64) -> Result<f64> {
    check_dim("psnr", truth.len(), estimate.len())?;
    if !(max_val > 0.0) {
        return Err(Error::Config(format!("psnr max value must be positive, got {max_val}")));
    }
    let mse = (estimate - truth).norm_squared() / truth.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB))
}

/// Per-frame PSNR with unit peak.
pub fn frame_psnrs(estimate: &FrameSequence, truth: &FrameSequence) -> Result<Vec<f64>> {
    estimate.check_conforming(truth, "frame_psnrs")?;
    estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| psnr(a, b, 1.0))
        .collect()
}

/// Arithmetic mean of the per-frame PSNRs.
pub fn mean_psnr(estimate: &FrameSequence, truth: &FrameSequence) -> Result<f64> {
    let values = frame_psnrs(estimate, truth)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
