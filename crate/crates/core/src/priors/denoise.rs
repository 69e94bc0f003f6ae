use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::operators::{FrameShape, LinOp};
use crate::pgm::{decode_pgm, encode_pgm, BitDepth, GrayImage};

fn default_tv_iters() -> usize {
    30
}

fn default_timeout() -> f64 {
    60.0
}

fn yes() -> bool {
    true
}

/// Subprocess denoiser. See [`external_denoise`] for the file protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalDenoiser {
    /// Program followed by its arguments; run inside the working directory.
    pub command: Vec<String>,
    /// Exchange directory. A fresh directory under the system temp dir is
    /// used per call when absent.
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserKind {
    Identity,
    /// Gaussian smoothing; the strength is the kernel width in pixels.
    GaussianSmooth,
    /// 3x3 median.
    Median3,
    /// ROF denoising by dual projection; the strength is the TV weight.
    TvChambolle {
        #[serde(default = "default_tv_iters")]
        iters: usize,
    },
    External(ExternalDenoiser),
}

/// A frame denoiser `D(frame; strength)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    #[serde(flatten)]
    pub kind: DenoiserKind,
    /// Clamp outputs to `[0, 1]`.
    #[serde(default = "yes")]
    pub clamp: bool,
}

impl Denoiser {
    pub fn new(kind: DenoiserKind) -> Self {
        Self { kind, clamp: true }
    }

    pub fn identity() -> Self {
        Self::new(DenoiserKind::Identity)
    }

    pub fn tv(iters: usize) -> Self {
        Self::new(DenoiserKind::TvChambolle { iters })
    }

    pub fn without_clamp(mut self) -> Self {
        self.clamp = false;
        self
    }

    pub fn denoise(&self, frame: &DVector<f64>, shape: FrameShape, sigma: f64) -> Result<DVector<f64>> {
        check_dim("denoise", shape.len(), frame.len())?;
        if !(sigma >= 0.0) {
            return Err(Error::Config(format!("denoiser strength must be non-negative, got {sigma}")));
        }
        let mut out = match &self.kind {
            DenoiserKind::Identity => frame.clone(),
            DenoiserKind::GaussianSmooth => gaussian_smooth(frame, shape, sigma),
            DenoiserKind::Median3 => median3(frame, shape),
            DenoiserKind::TvChambolle { iters } => tv_chambolle(frame, shape, sigma, *iters),
            DenoiserKind::External(ext) => external_denoise(ext, frame, shape, sigma)?,
        };
        if self.clamp {
            out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        Ok(out)
    }
}

/// Separable Gaussian smoothing, renormalized over the in-frame taps so
/// that constants are preserved at the border.
pub fn gaussian_smooth(frame: &DVector<f64>, shape: FrameShape, width: f64) -> DVector<f64> {
    if width <= 0.0 {
        return frame.clone();
    }
    let r = (3.0 * width).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * width * width)).exp())
        .collect();
    let FrameShape { rows, cols } = shape;
    let pass = |src: &[f64], along_rows: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for i in 0..rows {
            for j in 0..cols {
                let (pos, len) = if along_rows { (j, cols) } else { (i, rows) };
                let (mut acc, mut norm) = (0.0, 0.0);
                for k in -r..=r {
                    let q = pos as isize + k;
                    if q < 0 || q >= len as isize {
                        continue;
                    }
                    let q = q as usize;
                    let idx = if along_rows { i * cols + q } else { q * cols + j };
                    let w = taps[(k + r) as usize];
                    acc += w * src[idx];
                    norm += w;
                }
                dst[i * cols + j] = acc / norm;
            }
        }
        dst
    };
    let tmp = pass(frame.as_slice(), true);
    DVector::from_vec(pass(&tmp, false))
}

/// 3x3 median, window clipped at the frame border.
pub fn median3(frame: &DVector<f64>, shape: FrameShape) -> DVector<f64> {
    let FrameShape { rows, cols } = shape;
    let mut out = DVector::zeros(frame.len());
    let mut window = Vec::with_capacity(9);
    for i in 0..rows {
        for j in 0..cols {
            window.clear();
            for ii in i.saturating_sub(1)..(i + 2).min(rows) {
                for jj in j.saturating_sub(1)..(j + 2).min(cols) {
                    window.push(frame[ii * cols + jj]);
                }
            }
            window.sort_by(f64::total_cmp);
            let m = window.len();
            out[i * cols + j] = if m % 2 == 1 {
                window[m / 2]
            } else {
                0.5 * (window[m / 2 - 1] + window[m / 2])
            };
        }
    }
    out
}

/// Isotropic total variation with forward differences.
pub fn total_variation(frame: &DVector<f64>, shape: FrameShape) -> f64 {
    let grad = LinOp::FirstDifference(shape).apply(frame).expect("frame matches shape");
    let n = shape.len();
    (0..n).map(|p| grad[p].hypot(grad[n + p])).sum()
}

/// `1/2 ||u - f||^2 + weight * TV(u)`.
pub fn rof_objective(u: &DVector<f64>, f: &DVector<f64>, shape: FrameShape, weight: f64) -> f64 {
    0.5 * (u - f).norm_squared() + weight * total_variation(u, shape)
}

/// ROF denoising by Chambolle's dual projection iteration with a fixed
/// iteration count and step 1/8.
pub fn tv_chambolle(frame: &DVector<f64>, shape: FrameShape, weight: f64, iters: usize) -> DVector<f64> {
    if weight <= 0.0 || iters == 0 {
        return frame.clone();
    }
    const TAU: f64 = 0.125;
    let n = shape.len();
    let grad = LinOp::FirstDifference(shape);
    let mut p = vec![0.0; 2 * n];
    let mut div = vec![0.0; n];
    let mut g = vec![0.0; 2 * n];
    let mut arg = vec![0.0; n];
    for _ in 0..iters {
        // div p = -grad^T p
        grad.adjoint_slice(&p, &mut div);
        for k in 0..n {
            arg[k] = -div[k] - frame[k] / weight;
        }
        grad.forward_slice(&arg, &mut g);
        for k in 0..n {
            let mag = g[k].hypot(g[n + k]);
            let denom = 1.0 + TAU * mag;
            p[k] = (p[k] + TAU * g[k]) / denom;
            p[n + k] = (p[n + k] + TAU * g[n + k]) / denom;
        }
    }
    grad.adjoint_slice(&p, &mut div);
    DVector::from_iterator(n, (0..n).map(|k| frame[k] + weight * div[k]))
}

static EXCHANGE_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Serialize)]
struct SidecarMeta {
    sigma: f64,
    width: usize,
    height: usize,
}

/// Runs an external denoiser.
///
/// Writes `frame_in.pgm` (16-bit P5) and `meta.json`
/// (`{"sigma", "width", "height"}`) into the exchange directory, runs the
/// command there and reads back `frame_out.pgm`, which must have the same
/// dimensions. A nonzero exit status, a timeout, or a missing or malformed
/// output are errors.
pub fn external_denoise(
    ext: &ExternalDenoiser,
    frame: &DVector<f64>,
    shape: FrameShape,
    sigma: f64,
) -> Result<DVector<f64>> {
    let program = ext
        .command
        .first()
        .ok_or_else(|| Error::Config("external denoiser command is empty".into()))?;
    let (dir, scratch) = match &ext.workdir {
        Some(d) => (d.clone(), false),
        None => {
            let id = EXCHANGE_COUNTER.fetch_add(1, Ordering::Relaxed);
            let d = std::env::temp_dir().join(format!("ksadmm-denoise-{}-{id}", std::process::id()));
            (d, true)
        }
    };
    fs::create_dir_all(&dir)?;
    let result = run_exchange(ext, program, &dir, frame, shape, sigma);
    if scratch {
        let _ = fs::remove_dir_all(&dir);
    }
    result
}

fn run_exchange(
    ext: &ExternalDenoiser,
    program: &str,
    dir: &Path,
    frame: &DVector<f64>,
    shape: FrameShape,
    sigma: f64,
) -> Result<DVector<f64>> {
    let input = GrayImage::from_frame(frame, shape)?;
    fs::write(dir.join("frame_in.pgm"), encode_pgm(&input, BitDepth::U16))?;
    let meta = SidecarMeta {
        sigma,
        width: shape.cols,
        height: shape.rows,
    };
    fs::write(dir.join("meta.json"), serde_json::to_vec(&meta)?)?;
    let out_path = dir.join("frame_out.pgm");
    if out_path.exists() {
        fs::remove_file(&out_path)?;
    }

    let command_line = ext.command.join(" ");
    let mut child = Command::new(program)
        .args(&ext.command[1..])
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Denoiser(format!("failed to launch `{command_line}`: {e}")))?;

    let deadline = Instant::now() + Duration::from_secs_f64(ext.timeout_secs.max(0.0));
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Denoiser(format!(
                "`{command_line}` timed out after {} s",
                ext.timeout_secs
            )));
        }
        std::thread::sleep(Duration::from_millis(2));
    };
    if !status.success() {
        let mut stderr = String::new();
        if let Some(mut pipe) = child.stderr.take() {
            let _ = pipe.read_to_string(&mut stderr);
        }
        return Err(Error::Denoiser(format!(
            "`{command_line}` exited with {status}: {}",
            stderr.trim()
        )));
    }
    let bytes = fs::read(&out_path)
        .map_err(|e| Error::Denoiser(format!("`{command_line}` produced no frame_out.pgm: {e}")))?;
    let image = decode_pgm(&bytes).map_err(|e| Error::Denoiser(format!("bad frame_out.pgm: {e}")))?;
    if image.shape() != shape {
        return Err(Error::Denoiser(format!(
            "frame_out.pgm is {}x{}, expected {}x{}",
            image.height(),
            image.width(),
            shape.rows,
            shape.cols
        )));
    }
    Ok(image.into_frame())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noisy(rng: &mut ChaCha8Rng, base: &DVector<f64>, sigma: f64) -> DVector<f64> {
        base.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
    }

    fn variance(v: &DVector<f64>) -> f64 {
        let mean = v.mean();
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
    }

    fn step_edge(shape: FrameShape) -> DVector<f64> {
        DVector::from_fn(shape.len(), |p, _| if p % shape.cols < shape.cols / 2 { 0.2 } else { 0.8 })
    }

    #[test]
    fn identity_returns_input() {
        let shape = FrameShape::new(4, 5);
        let f = DVector::from_fn(20, |i, _| i as f64 / 20.0);
        assert_eq!(Denoiser::identity().denoise(&f, shape, 0.3).unwrap(), f);
        assert!(Denoiser::identity().denoise(&f, FrameShape::new(3, 3), 0.3).is_err());
    }

    #[test]
    fn clamping_is_optional() {
        let shape = FrameShape::new(1, 3);
        let f = DVector::from_vec(vec![-0.5, 0.5, 1.5]);
        let clamped = Denoiser::identity().denoise(&f, shape, 0.0).unwrap();
        assert_eq!(clamped.as_slice(), &[0.0, 0.5, 1.0]);
        let raw = Denoiser::identity().without_clamp().denoise(&f, shape, 0.0).unwrap();
        assert_eq!(raw, f);
    }

    #[test]
    fn median_removes_single_impulse() {
        let shape = FrameShape::new(6, 6);
        let mut f = DVector::from_element(36, 0.4);
        f[14] = 1.0;
        let out = Denoiser::new(DenoiserKind::Median3).denoise(&f, shape, 0.0).unwrap();
        assert!(out.iter().all(|v| *v == 0.4));
    }

    #[test]
    fn smoothing_preserves_constants() {
        let shape = FrameShape::new(7, 9);
        let f = DVector::from_element(63, 0.37);
        let out = gaussian_smooth(&f, shape, 1.5);
        assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-14));
        let tv = tv_chambolle(&f, shape, 0.2, 30);
        assert!(tv.iter().all(|v| (v - 0.37).abs() < 1e-14));
    }

    #[test]
    fn tv_vanishing_weight_returns_input() {
        let shape = FrameShape::new(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = noisy(&mut rng, &DVector::from_element(64, 0.5), 0.1);
        let out = tv_chambolle(&f, shape, 1e-12, 30);
        assert!((out - &f).amax() <= 1e-10);
    }

    #[test]
    fn tv_lowers_rof_objective_and_variance() {
        let shape = FrameShape::new(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ramp = DVector::from_fn(256, |p, _| (p % 16) as f64 / 15.0);
        let f = noisy(&mut rng, &ramp, 0.1);
        let u = tv_chambolle(&f, shape, 0.1, 50);
        assert!(rof_objective(&u, &f, shape, 0.1) < rof_objective(&f, &f, shape, 0.1));

        let noise = noisy(&mut rng, &DVector::from_element(256, 0.5), 0.2);
        let u = tv_chambolle(&noise, shape, 0.2, 30);
        assert!(variance(&u) < variance(&noise));
    }

    #[test]
    fn tv_on_noisy_edge_reduces_total_variation() {
        let shape = FrameShape::new(12, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = noisy(&mut rng, &step_edge(shape), 0.08);
        let out = Denoiser::tv(30).denoise(&f, shape, 0.1).unwrap();
        assert!(total_variation(&out, shape) <= total_variation(&f, shape));
    }

    #[test]
    fn tv_converges_towards_rof_minimizer() {
        // More iterations never do worse on the ROF objective by a margin.
        let shape = FrameShape::new(10, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = noisy(&mut rng, &step_edge(shape), 0.1);
        let few = rof_objective(&tv_chambolle(&f, shape, 0.15, 10), &f, shape, 0.15);
        let many = rof_objective(&tv_chambolle(&f, shape, 0.15, 400), &f, shape, 0.15);
        assert!(many <= few + 1e-9);
    }

    #[test]
    fn nonexpansive_on_random_pairs() {
        let shape = FrameShape::new(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);

        // Gaussian smoothing is linear: bound by its dense operator norm.
        let width = 1.2;
        let cols: Vec<DVector<f64>> = (0..64)
            .map(|i| {
                let mut e = DVector::zeros(64);
                e[i] = 1.0;
                gaussian_smooth(&e, shape, width)
            })
            .collect();
        let dense = DMatrix::from_columns(&cols);
        let op_norm = dense.singular_values().max();

        for _ in 0..50 {
            let u = DVector::from_fn(64, |_, _| rng.random_range(0.0..1.0));
            let v = DVector::from_fn(64, |_, _| rng.random_range(0.0..1.0));
            let d_in = (&u - &v).norm();
            let d_inf = (&u - &v).amax();

            let id = Denoiser::identity();
            let d = (id.denoise(&u, shape, 0.0).unwrap() - id.denoise(&v, shape, 0.0).unwrap()).norm();
            assert!(d <= d_in + 1e-9);

            // The median filter is nonexpansive in the max norm.
            let d = (median3(&u, shape) - median3(&v, shape)).amax();
            assert!(d <= d_inf + 1e-9);

            let d = (gaussian_smooth(&u, shape, width) - gaussian_smooth(&v, shape, width)).norm();
            assert!(d <= op_norm * d_in + 1e-9);

            // Exact ROF denoising is firmly nonexpansive; allow for the
            // truncated inner iteration.
            let d = (tv_chambolle(&u, shape, 0.1, 200) - tv_chambolle(&v, shape, 0.1, 200)).norm();
            assert!(d <= 1.01 * d_in + 1e-9, "{d} vs {d_in}");
        }
    }

    #[test]
    fn config_round_trip() {
        let d: Denoiser = serde_json::from_str(r#"{"kind": "tv_chambolle"}"#).unwrap();
        assert_eq!(d, Denoiser::tv(30));
        let d: Denoiser =
            serde_json::from_str(r#"{"kind": "external", "command": ["cp", "a", "b"], "clamp": false}"#).unwrap();
        match d.kind {
            DenoiserKind::External(ext) => {
                assert_eq!(ext.command.len(), 3);
                assert_eq!(ext.timeout_secs, 60.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(!d.clamp);
    }

    #[cfg(unix)]
    mod external {
        use super::*;

        fn ext(command: &[&str], workdir: Option<PathBuf>) -> Denoiser {
            Denoiser::new(DenoiserKind::External(ExternalDenoiser {
                command: command.iter().map(|s| s.to_string()).collect(),
                workdir,
                timeout_secs: 10.0,
            }))
        }

        #[test]
        fn copy_command_acts_as_identity() {
            let shape = FrameShape::new(5, 7);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let f = DVector::from_fn(35, |_, _| rng.random_range(0.0..1.0));
            let out = ext(&["cp", "frame_in.pgm", "frame_out.pgm"], None)
                .denoise(&f, shape, 0.05)
                .unwrap();
            assert!((out - &f).amax() <= 1.0 / 65535.0);
        }

        #[test]
        fn sidecar_is_written() {
            let dir = tempfile::tempdir().unwrap();
            let shape = FrameShape::new(3, 4);
            let f = DVector::from_element(12, 0.5);
            ext(&["cp", "frame_in.pgm", "frame_out.pgm"], Some(dir.path().to_path_buf()))
                .denoise(&f, shape, 0.25)
                .unwrap();
            let meta: serde_json::Value =
                serde_json::from_slice(&fs::read(dir.path().join("meta.json")).unwrap()).unwrap();
            assert_eq!(meta["sigma"], 0.25);
            assert_eq!(meta["width"], 4);
            assert_eq!(meta["height"], 3);
        }

        #[test]
        fn missing_command_reports_command_line() {
            let err = ext(&["definitely-not-a-denoiser-binary", "--x"], None)
                .denoise(&DVector::zeros(4), FrameShape::new(2, 2), 0.1)
                .unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains("definitely-not-a-denoiser-binary --x"), "{msg}");
        }

        #[test]
        fn failure_modes() {
            let shape = FrameShape::new(2, 2);
            let f = DVector::zeros(4);
            assert!(ext(&["false"], None).denoise(&f, shape, 0.1).is_err());
            // Exits cleanly but writes nothing.
            assert!(ext(&["true"], None).denoise(&f, shape, 0.1).is_err());
            let mut slow = ext(&["sleep", "5"], None);
            if let DenoiserKind::External(e) = &mut slow.kind {
                e.timeout_secs = 0.2;
            }
            let err = slow.denoise(&f, shape, 0.1).unwrap_err();
            assert!(err.to_string().contains("timed out"));
        }

        #[test]
        fn dimension_mismatch_is_rejected() {
            let dir = tempfile::tempdir().unwrap();
            let other = GrayImage::new(FrameShape::new(3, 3), vec![0.0; 9]).unwrap();
            fs::write(dir.path().join("other.pgm"), encode_pgm(&other, BitDepth::U16)).unwrap();
            let err = ext(&["cp", "other.pgm", "frame_out.pgm"], Some(dir.path().to_path_buf()))
                .denoise(&DVector::zeros(4), FrameShape::new(2, 2), 0.1)
                .unwrap_err();
            assert!(err.to_string().contains("expected 2x2"));
        }
    }

    #[test]
    fn sixteen_bit_quantization_bound() {
        let shape = FrameShape::new(9, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = DVector::from_fn(99, |_, _| rng.random_range(0.0..1.0));
        let img = GrayImage::from_frame(&f, shape).unwrap();
        let back = decode_pgm(&encode_pgm(&img, BitDepth::U16)).unwrap().into_frame();
        assert!((back - f).amax() <= 1.0 / 65535.0);
    }
}
