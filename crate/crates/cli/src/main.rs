//! `fosr`: simulate data, fit the model, summarize, select and run studies.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use commands::{FitSettings, SelectSettings, SimulateSettings, StudySettings, SummarizeSettings};
use manifest::resolve;

#[derive(Parser)]
#[command(name = "fosr", version, about = "Bayesian function-on-scalars regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known coefficient functions.
    Simulate(SimulateArgs),
    /// Run the Gibbs sampler and store the draws.
    Fit(FitArgs),
    /// Posterior means and credible bands for every coefficient function.
    Summarize(SummarizeArgs),
    /// Decoupled variable selection along a group-lasso path.
    Select(SelectArgs),
    /// Replicated simulation study.
    Study(StudyArgs),
}

/// Options shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON settings file (or a previous run manifest); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Number of non-null predictors.
    #[arg(long)]
    p1: Option<usize>,
    /// Signal-to-noise ratio.
    #[arg(long)]
    rsnr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of curve cells to mask as missing.
    #[arg(long)]
    missing_frac: Option<f64>,
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    design: Option<PathBuf>,
    /// Number of factors.
    #[arg(long = "K", short = 'K')]
    #[serde(rename = "K")]
    k: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hold the loadings at the smoothest spline basis functions.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    fix_basis: Option<bool>,
    /// Independent chains, run in parallel.
    #[arg(long)]
    chains: Option<usize>,
    /// Interior spline knots.
    #[arg(long)]
    knots: Option<usize>,
    /// Center and scale the design columns.
    #[arg(long)]
    standardize: Option<bool>,
}

#[derive(Args, Serialize)]
struct SummarizeArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Archive directory, or a fit output directory whose chains are pooled.
    #[arg(long)]
    archive: Option<PathBuf>,
    /// Credible level of the bands.
    #[arg(long)]
    level: Option<f64>,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    archive: Option<PathBuf>,
    /// Design (raw scale) at which predictions are targeted.
    #[arg(long)]
    predict_design: Option<PathBuf>,
    #[arg(long)]
    grid_size: Option<usize>,
}

#[derive(Args, Serialize)]
struct StudyArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    p1: Option<usize>,
    #[arg(long)]
    rsnr: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "K", short = 'K')]
    #[serde(rename = "K")]
    k: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Also fit the fixed-basis ablation.
    #[arg(long)]
    ablation: Option<bool>,
    #[arg(long)]
    grid_size: Option<usize>,
}

fn config_path(c: &Common) -> Option<&Path> {
    c.config.as_deref()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let cfg: SimulateSettings = resolve(&a, config_path(&a.common))?;
            commands::simulate(&cfg, &a.common.out)
        }
        Command::Fit(a) => {
            let cfg: FitSettings = resolve(&a, config_path(&a.common))?;
            commands::fit(&cfg, &a.common.out)
        }
        Command::Summarize(a) => {
            let cfg: SummarizeSettings = resolve(&a, config_path(&a.common))?;
            commands::summarize_cmd(&cfg, &a.common.out)
        }
        Command::Select(a) => {
            let cfg: SelectSettings = resolve(&a, config_path(&a.common))?;
            commands::select(&cfg, &a.common.out)
        }
        Command::Study(a) => {
            let cfg: StudySettings = resolve(&a, config_path(&a.common))?;
            commands::study(&cfg, &a.common.out)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<fosr::Error>())
        .any(|e| e.is_numerical());
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_map_to_exit_three() {
        let err = anyhow::Error::from(fosr::Error::Numerical("nan".into())).context("fitting");
        assert_eq!(exit_code(&err), 3);
        let err = anyhow::Error::from(fosr::Error::Invalid("bad".into()));
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
