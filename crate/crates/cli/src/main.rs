use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plaplab_cli::config::{EstimatesConfig, ReportConfig, SolveConfig, VerifyConfig};
use plaplab_cli::run::with_jobs;
use plaplab_cli::{estimates, report, solve, verify, ExperimentConfig, Outcome, Overrides, Result};

/// Reproducible experiments for the regularized p-Laplacian and its
/// second-order estimates.
#[derive(Parser)]
#[command(name = "plaplab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample random (A, e) pairs and check the matrix inequalities.
    VerifyInequalities(Common),
    /// Solve the radial benchmark (or a problem file) and write snapshots.
    Solve(Common),
    /// Evaluate the integral estimates on solved fields.
    Estimates(Common),
    /// Join earlier runs into stability and summary tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Output directory of an earlier run (repeatable).
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: one per core).
    #[arg(long)]
    jobs: Option<usize>,
    /// Cells per side of the benchmark grid.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    p: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    s: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Scale ratios for the gradient-comparability sweep.
    #[arg(long = "M", value_delimiter = ',')]
    m: Option<Vec<f64>>,
    /// Samples per dimension for `verify-inequalities`.
    #[arg(long)]
    samples: Option<u64>,
    /// Dimensions for `verify-inequalities`.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
}

impl Common {
    fn config(&self, inputs: Option<Vec<PathBuf>>) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::default(),
        };
        Ok(base.apply(&Overrides {
            seed: self.seed,
            grid: self.grid,
            ps: self.p.clone(),
            s: self.s.clone(),
            eps: self.eps.clone(),
            ms: self.m.clone(),
            samples: self.samples,
            dims: self.dims.clone(),
            inputs,
        }))
    }
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::VerifyInequalities(c) => {
            let cfg = VerifyConfig::resolve(&c.config(None)?)?;
            with_jobs(c.jobs, || verify::execute(&cfg, &c.out))?.map(|r| r.1)
        }
        Command::Solve(c) => {
            let cfg = SolveConfig::resolve(&c.config(None)?)?;
            with_jobs(c.jobs, || solve::execute(&cfg, &c.out))?.map(|r| r.1)
        }
        Command::Estimates(c) => {
            let cfg = EstimatesConfig::resolve(&c.config(None)?)?;
            with_jobs(c.jobs, || estimates::execute(&cfg, &c.out))?.map(|r| r.1)
        }
        Command::Report { common, inputs } => {
            let cfg = ReportConfig::resolve(&common.config((!inputs.is_empty()).then_some(inputs))?)?;
            report::execute(&cfg, &common.out).map(|r| r.1)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(outcome) if outcome.passed() => {
            println!("all contracts passed (config {})", outcome.config_hash);
            ExitCode::SUCCESS
        }
        Ok(outcome) => {
            for t in &outcome.failures {
                eprintln!("FAILED {}: {}", t.task, t.detail);
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
