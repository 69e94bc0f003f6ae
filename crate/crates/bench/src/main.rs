use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ksadmm_bench::experiment::{write_results_csv, write_trace_csv};
use ksadmm_bench::plot::{line_plot, Axes};
use ksadmm_bench::scene::{build_problem, model_for, Problem};
use ksadmm_bench::{
    psnr_series, run_cell, run_psnr_trace, run_scaling_n, run_scaling_t, timing_series, BenchError,
    ExperimentConfig, RunRecord,
};
use ksadmm_core::pgm::{read_sequence, write_sequence, BitDepth};

#[derive(Parser)]
#[command(name = "ksadmm", about = "ADMM / Kalman-smoother deblurring experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate truth and measurement sequences for the first grid cell.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a measurement sequence with every configured solver.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Time the solvers over the frame counts.
    BenchT {
        #[arg(long)]
        config: PathBuf,
        /// Use the large grid (N = 64x64, T up to 100).
        #[arg(long)]
        full: bool,
    },
    /// Time the solvers over the patch sizes.
    BenchN {
        #[arg(long)]
        config: PathBuf,
        /// Use the large grid (N up to 96x96, T = 5).
        #[arg(long)]
        full: bool,
    },
    /// Per-iteration PSNR of every solver on one cell.
    Trace {
        #[arg(long)]
        config: PathBuf,
    },
}

fn write_svg(path: &Path, svg: String) -> Result<(), BenchError> {
    std::fs::write(path, svg)?;
    Ok(())
}

fn write_reconstructions(dir: &Path, records: &[RunRecord]) -> Result<(), BenchError> {
    for r in records {
        if let Some(x) = &r.reconstruction {
            write_sequence(&dir.join(&r.strategy), x, BitDepth::U16)?;
        }
    }
    Ok(())
}

fn report(records: &[RunRecord]) {
    for r in records {
        match &r.error {
            None => println!(
                "{:>6} T={:<4} N={:<6} {:>10.4}s  psnr {:.2} dB (measurements {:.2} dB)",
                r.strategy, r.frames, r.n, r.seconds, r.final_psnr, r.measurement_psnr
            ),
            Some(e) => println!("{:>6} T={:<4} N={:<6} failed: {e}", r.strategy, r.frames, r.n),
        }
    }
}

fn timing_plot(dir: &Path, records: &[RunRecord], name: &str, x_label: &str, x: fn(&RunRecord) -> f64) -> Result<(), BenchError> {
    let axes = Axes {
        title: format!("solve time vs {x_label}"),
        x_label: x_label.into(),
        y_label: "seconds".into(),
        log_x: true,
        log_y: true,
    };
    write_svg(&dir.join(name), line_plot(&axes, &timing_series(records, x)))
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let Problem { truth, measurements, .. } = build_problem(&cfg, cfg.shapes()[0], cfg.frame_counts[0])?;
            write_sequence(&out.join("truth"), &truth, BitDepth::U16)?;
            write_sequence(&out.join("measurements"), &measurements, BitDepth::U16)?;
            println!("wrote {} frames to {}", truth.len(), out.display());
        }
        Command::Solve { config, data, truth } => {
            let cfg = ExperimentConfig::load(&config)?;
            let measurements = read_sequence(&data)?;
            let model = model_for(&cfg, measurements.shape(), measurements.len())?;
            let truth = match truth {
                Some(dir) => read_sequence(&dir)?,
                None => measurements.clone(),
            };
            let problem = Problem { model, truth, measurements };
            let records: Vec<_> = cfg.solvers.iter().map(|s| run_cell(&problem, s, 1)).collect();
            std::fs::create_dir_all(&cfg.output_dir)?;
            write_results_csv(&cfg.output_dir.join("results.csv"), &records)?;
            write_reconstructions(&cfg.output_dir, &records)?;
            report(&records);
            if let Some(e) = records.iter().find_map(|r| r.error.clone()) {
                return Err(BenchError::Failed(e));
            }
        }
        Command::BenchT { config, full } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if full {
                cfg.full_t_grid();
            }
            let records = run_scaling_t(&cfg);
            let dir = cfg.output_dir.join("bench-t");
            std::fs::create_dir_all(&dir)?;
            write_results_csv(&dir.join("results.csv"), &records)?;
            timing_plot(&dir, &records, "scaling_t.svg", "T", |r| r.frames as f64)?;
            report(&records);
        }
        Command::BenchN { config, full } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if full {
                cfg.full_n_grid();
            }
            let records = run_scaling_n(&cfg);
            let dir = cfg.output_dir.join("bench-n");
            std::fs::create_dir_all(&dir)?;
            write_results_csv(&dir.join("results.csv"), &records)?;
            timing_plot(&dir, &records, "scaling_n.svg", "N", |r| r.n as f64)?;
            report(&records);
        }
        Command::Trace { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let records = run_psnr_trace(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            write_trace_csv(&cfg.output_dir.join("trace.csv"), &records)?;
            write_results_csv(&cfg.output_dir.join("results.csv"), &records)?;
            let axes = Axes {
                title: "mean PSNR per iteration".into(),
                x_label: "iteration".into(),
                y_label: "PSNR (dB)".into(),
                ..Default::default()
            };
            write_svg(&cfg.output_dir.join("trace.svg"), line_plot(&axes, &psnr_series(&records)))?;
            write_reconstructions(&cfg.output_dir, &records)?;
            report(&records);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
