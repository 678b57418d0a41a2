//! `mgvar`: simulation studies, CSV predictions with confidence intervals,
//! and the exact-identity self check.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mgvar_core::harness::{
    format_summary, predict_with_intervals, read_csv, run_experiment, write_reports, ExperimentConfig, KernelChoice,
    Schema, SimModel, TargetSpec,
};
use mgvar_core::model::{default_mtry, default_nodesize};
use mgvar_core::oracle::oracle_check;
use mgvar_core::{ForestConfig, RandomStream, DEFAULT_ALPHA};

#[derive(Parser)]
#[command(name = "mgvar", version, about = "Matched-group variance estimation for subbagged forests")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Mars,
    Mlr,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Tree,
    Mean,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte Carlo study of bias and interval coverage on a synthetic model.
    Simulate {
        #[arg(long, value_enum, default_value = "mars")]
        model: ModelArg,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Trees per matched group; 1 selects the bootstrap estimator.
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 1000)]
        b: usize,
        /// Defaults to ceil(d/2).
        #[arg(long)]
        mtry: Option<usize>,
        /// Defaults to 2 floor(ln n).
        #[arg(long)]
        nodesize: Option<usize>,
        #[arg(long, default_value_t = 300)]
        nmc: usize,
        #[arg(long, default_value_t = 2000)]
        ntruth: usize,
        /// random:<count>, center, or file:<path>
        #[arg(long, default_value = "random:10")]
        targets: String,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Neighbors for the locally smoothed estimator (0 disables it).
        #[arg(long, default_value_t = 0)]
        smooth: usize,
        #[arg(long, value_enum, default_value = "tree")]
        kernel: KernelArg,
        /// Noise standard deviation.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a forest on a CSV and report predictions with intervals.
    Predict {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 1000)]
        b: usize,
        #[arg(long)]
        mtry: Option<usize>,
        #[arg(long)]
        nodesize: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        smooth: usize,
        /// Refit a fresh forest for every smoothing neighbor.
        #[arg(long)]
        smooth_refit: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every exact combinatorial identity and print a TAP report.
    OracleCheck {
        #[arg(long, default_value_t = 24)]
        max_n: usize,
    },
}

fn simulate(cmd: Cmd) -> Result<()> {
    let Cmd::Simulate {
        model,
        n,
        k,
        m,
        b,
        mtry,
        nodesize,
        nmc,
        ntruth,
        targets,
        alpha,
        smooth,
        kernel,
        sigma,
        seed,
        out,
    } = cmd
    else {
        unreachable!()
    };
    let model = match model {
        ModelArg::Mars => SimModel::mars(),
        ModelArg::Mlr => SimModel::mlr(),
    }
    .with_sigma(sigma);
    let spec: TargetSpec = targets.parse()?;
    let points = spec.resolve(model.dim(), &RandomStream::new(seed).child(9))?;
    let cfg = ExperimentConfig {
        model,
        n,
        k,
        m,
        b,
        mtry: mtry.unwrap_or_else(|| default_mtry(model.dim())),
        nodesize: nodesize.unwrap_or_else(|| default_nodesize(n)),
        n_mc: nmc,
        n_truth: ntruth,
        targets: points,
        seed,
        alpha,
        smoothing: smooth,
        kernel: match kernel {
            KernelArg::Tree => KernelChoice::Tree,
            KernelArg::Mean => KernelChoice::Mean,
        },
    };
    let res = run_experiment(&cfg, Some(&out)).context("simulation failed")?;
    print!("{}", format_summary(&res.eval));
    if !res.eval_smoothed.is_empty() {
        print!("{}", format_summary(&res.eval_smoothed));
    }
    eprintln!("results written to {}", out.display());
    Ok(())
}

fn predict(cmd: Cmd) -> Result<()> {
    let Cmd::Predict {
        train,
        schema,
        targets,
        k,
        m,
        b,
        mtry,
        nodesize,
        alpha,
        smooth,
        smooth_refit,
        seed,
        out,
    } = cmd
    else {
        unreachable!()
    };
    let schema = Schema::from_path(&schema).with_context(|| format!("reading schema {}", schema.display()))?;
    let table = read_csv(&train, &schema).with_context(|| format!("reading {}", train.display()))?;
    let points = table.encoder.encode_targets(&targets)?;
    let data = &table.dataset;
    let cfg = ForestConfig {
        k,
        m,
        b,
        mtry: mtry.unwrap_or_else(|| default_mtry(data.d())),
        nodesize: nodesize.unwrap_or_else(|| default_nodesize(data.n())),
        seed,
        smoothing_neighbors: smooth,
        alpha,
    };
    if m == 0 {
        bail!("--m must be at least 1");
    }
    let reports = predict_with_intervals(data, &cfg, &points, smooth_refit)?;
    write_reports(&out, &reports)?;
    eprintln!("{} predictions written to {}", reports.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        c @ Cmd::Simulate { .. } => simulate(c),
        c @ Cmd::Predict { .. } => predict(c),
        Cmd::OracleCheck { max_n } => {
            let report = oracle_check(max_n);
            print!("{}", report.to_tap());
            if report.all_passed() {
                Ok(())
            } else {
                return ExitCode::FAILURE;
            }
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
