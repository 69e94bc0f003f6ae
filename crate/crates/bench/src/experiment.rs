use std::path::Path;

use ksadmm_core::admm::{solve, SolveTrace, SolverConfig};
use ksadmm_core::metrics::mean_psnr;
use ksadmm_core::operators::FrameShape;
use ksadmm_core::ssm::FrameSequence;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::scene::{build_problem, Problem};
use crate::BenchError;

/// Outcome of one (strategy, T, N) cell.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub strategy: String,
    pub frames: usize,
    pub n: usize,
    /// Median over repeats of the solve time.
    pub seconds: f64,
    pub psnr_trace: Vec<f64>,
    pub final_psnr: f64,
    pub measurement_psnr: f64,
    pub trace: SolveTrace,
    pub reconstruction: Option<FrameSequence>,
    pub error: Option<String>,
}

impl RunRecord {
    fn failed(strategy: &str, frames: usize, n: usize, measurement_psnr: f64, error: String) -> Self {
        Self {
            strategy: strategy.to_string(),
            frames,
            n,
            seconds: f64::NAN,
            psnr_trace: Vec::new(),
            final_psnr: f64::NAN,
            measurement_psnr,
            trace: SolveTrace::default(),
            reconstruction: None,
            error: Some(error),
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Solves one problem `repeats` times with one solver.
pub fn run_cell(problem: &Problem, solver: &SolverConfig, repeats: usize) -> RunRecord {
    let frames = problem.model.frames();
    let n = problem.model.state_dim();
    let strategy = solver.x_strategy.name();
    let measurement_psnr = mean_psnr(&problem.measurements, &problem.truth).unwrap_or(f64::NAN);
    let mut times = Vec::with_capacity(repeats);
    let mut first = None;
    for _ in 0..repeats.max(1) {
        match solve(&problem.model, &problem.measurements, solver, Some(&problem.truth)) {
            Ok(out) => {
                times.push(out.trace.solve_seconds());
                first.get_or_insert(out);
            }
            Err(e) => return RunRecord::failed(strategy, frames, n, measurement_psnr, e.to_string()),
        }
    }
    let out = first.expect("at least one repeat");
    let psnr_trace: Vec<f64> = out.trace.records.iter().filter_map(|r| r.mean_psnr).collect();
    let final_psnr = mean_psnr(&out.x, &problem.truth).unwrap_or(f64::NAN);
    RunRecord {
        strategy: strategy.to_string(),
        frames,
        n,
        seconds: median(&mut times),
        psnr_trace,
        final_psnr,
        measurement_psnr,
        trace: out.trace,
        reconstruction: Some(out.x),
        error: None,
    }
}

fn sweep(cfg: &ExperimentConfig, cells: &[(FrameShape, usize)]) -> Vec<RunRecord> {
    let mut records = Vec::new();
    for &(shape, frames) in cells {
        match build_problem(cfg, shape, frames) {
            Ok(problem) => {
                for solver in &cfg.solvers {
                    records.push(run_cell(&problem, solver, cfg.repeats));
                }
            }
            Err(e) => {
                for solver in &cfg.solvers {
                    let name = solver.x_strategy.name();
                    records.push(RunRecord::failed(name, frames, shape.len(), f64::NAN, e.to_string()));
                }
            }
        }
    }
    records
}

/// Timing sweep over `T_values` at the first patch size.
pub fn run_scaling_t(cfg: &ExperimentConfig) -> Vec<RunRecord> {
    let shape = cfg.shapes()[0];
    let cells: Vec<_> = cfg.frame_counts.iter().map(|&t| (shape, t)).collect();
    sweep(cfg, &cells)
}

/// Timing sweep over `patch_sizes` at the first frame count.
pub fn run_scaling_n(cfg: &ExperimentConfig) -> Vec<RunRecord> {
    let frames = cfg.frame_counts[0];
    let cells: Vec<_> = cfg.shapes().into_iter().map(|s| (s, frames)).collect();
    sweep(cfg, &cells)
}

/// Single-run PSNR traces of every solver on the first (N, T) cell.
pub fn run_psnr_trace(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, BenchError> {
    let problem = build_problem(cfg, cfg.shapes()[0], cfg.frame_counts[0])?;
    let records = if cfg.parallel {
        cfg.solvers.par_iter().map(|s| run_cell(&problem, s, 1)).collect()
    } else {
        cfg.solvers.iter().map(|s| run_cell(&problem, s, 1)).collect()
    };
    Ok(records)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Serialize)]
struct ResultRow<'a> {
    strategy: &'a str,
    #[serde(rename = "T")]
    frames: usize,
    #[serde(rename = "N")]
    n: usize,
    seconds: f64,
    final_psnr: f64,
    measurement_psnr: f64,
    error: &'a str,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    strategy: &'a str,
    #[serde(rename = "T")]
    frames: usize,
    #[serde(rename = "N")]
    n: usize,
    k: usize,
    mean_psnr: Option<f64>,
    phi: f64,
    primal_residual: f64,
    dual_residual: f64,
}

pub fn write_results_csv(path: &Path, records: &[RunRecord]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(ResultRow {
            strategy: &r.strategy,
            frames: r.frames,
            n: r.n,
            seconds: r.seconds,
            final_psnr: r.final_psnr,
            measurement_psnr: r.measurement_psnr,
            error: r.error.as_deref().unwrap_or(""),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, records: &[RunRecord]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        for it in &r.trace.records {
            w.serialize(TraceRow {
                strategy: &r.strategy,
                frames: r.frames,
                n: r.n,
                k: it.k,
                mean_psnr: it.mean_psnr,
                phi: it.phi,
                primal_residual: it.primal_residual,
                dual_residual: it.dual_residual,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [4.0, 8.0, 16.0, 32.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 0.5 * x.powf(2.5)).collect();
        assert!((loglog_slope(&xs, &ys) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
