mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Latent embedding models for hypergraphs with multiplicity.
#[derive(Debug, Parser)]
#[command(name = "hyperlatent", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// TOML or JSON (by `.json` extension) configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic instance: hyperlinks.txt and truth.json.
    Simulate,
    /// Fit the model to a hyperlink file and write fit.json.
    Fit(FitArgs),
    /// Confidence intervals from a fit, written to intervals.csv.
    Infer(InferArgs),
    /// Confidence ellipses of 2-D vertex embeddings (ellipses.json, ellipses.svg).
    Ellipses(EllipsesArgs),
    /// Estimation error over a grid of simulated designs.
    ExperimentError,
    /// Empirical coverage of plug-in confidence intervals.
    ExperimentCoverage,
    /// Empty hyperlink and null vertex frequencies in sparse regimes.
    ExperimentSparsity,
    /// Print null vertices, empty hyperlinks and density as JSON.
    Audit(AuditArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Hyperlink list: one hyperlink per line, vertices separated by spaces or commas.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of vertices, when some never appear.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Latent dimension, overriding the configuration.
    #[arg(long)]
    pub k: Option<usize>,
    /// Use the centered estimator without the identifiability penalty.
    #[arg(long)]
    pub f1: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// fit.json written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
}

#[derive(Debug, Args)]
pub struct EllipsesArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// Vertices to draw, by label or one-based index; overrides the configuration.
    #[arg(long, value_delimiter = ',')]
    pub vertices: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.code())
        }
    }
}
