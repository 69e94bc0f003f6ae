//! Experiment harness: synthetic blurred sequences, solver sweeps over frame
//! count and patch size, PSNR traces, CSV and SVG output.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod plot;
pub mod scene;

use std::collections::BTreeMap;

use thiserror::Error;

pub use config::ExperimentConfig;
pub use experiment::{loglog_slope, run_cell, run_psnr_trace, run_scaling_n, run_scaling_t, RunRecord};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Solver(#[from] ksadmm_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Solver(ksadmm_core::Error::Config(_)) => 2,
            _ => 3,
        }
    }
}

/// One series per strategy of `(x(record), seconds)`.
pub fn timing_series(records: &[RunRecord], x: impl Fn(&RunRecord) -> f64) -> Vec<plot::Series> {
    let mut by_strategy: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        by_strategy.entry(&r.strategy).or_default().push((x(r), r.seconds));
    }
    by_strategy
        .into_iter()
        .map(|(label, points)| plot::Series { label: label.to_string(), points })
        .collect()
}

/// One series per strategy of `(k, mean PSNR)`.
pub fn psnr_series(records: &[RunRecord]) -> Vec<plot::Series> {
    records
        .iter()
        .map(|r| plot::Series {
            label: r.strategy.clone(),
            points: r.psnr_trace.iter().enumerate().map(|(k, &p)| ((k + 1) as f64, p)).collect(),
        })
        .collect()
}
