use std::path::PathBuf;

use bayeshield_core::{BandwidthRule, NormOrder, PgaConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "bayeshield", version, about = "Kernel Bayes-error estimation and Bayes-error-raising perturbations")]
pub struct Cli {
    /// Worker threads for the similarity computations (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the Bayes error of a labeled dataset.
    Estimate(EstimateArgs),
    /// Perturb a dataset to raise its estimated Bayes error.
    Perturb(PerturbArgs),
    /// Compare the analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Run a canonical end-to-end example and write its plot data.
    Demo(DemoArgs),
    /// Re-run a report's recorded configuration and compare the results.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Heuristic {
    Median,
    RateScaledMedian,
}

impl From<Heuristic> for BandwidthRule {
    fn from(h: Heuristic) -> Self {
        match h {
            Heuristic::Median => BandwidthRule::Median,
            Heuristic::RateScaledMedian => BandwidthRule::RateScaledMedian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Norm {
    L2,
    Linf,
}

impl From<Norm> for NormOrder {
    fn from(n: Norm) -> Self {
        match n {
            Norm::L2 => NormOrder::L2,
            Norm::Linf => NormOrder::Linf,
        }
    }
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Fixed kernel bandwidth.
    #[arg(long, conflicts_with = "sigma_heuristic")]
    pub sigma: Option<f64>,
    /// Bandwidth rule used when --sigma is absent.
    #[arg(long, value_enum, default_value = "median")]
    pub sigma_heuristic: Heuristic,
    /// Embedding network (JSON); similarities are computed on embedded points.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PgaArgs {
    /// Per-sample perturbation budget.
    #[arg(long)]
    pub eps: f64,
    #[arg(long, value_enum, default_value = "l2")]
    pub norm: Norm,
    /// Step size (default: 0.1 * eps * n).
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = PgaConfig::DEFAULT_ITERATIONS)]
    pub iters: usize,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Dataset CSV.
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Write the posterior matrix here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a run report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Dataset CSV.
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub pga: PgaArgs,
    /// File of zero-based sample indices to leave untouched, one per line.
    #[arg(long)]
    pub frozen: Option<PathBuf>,
    /// Perturbed dataset; deltas and trace go next to it as <stem>.deltas.csv and <stem>.trace.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Dataset CSV.
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Posterior gap at or below which a row counts as an argmax tie.
    #[arg(long, default_value_t = 1e-6)]
    pub tie_tol: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Moons,
    Truncnorm,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub kind: GenKind,
    #[arg(long)]
    pub n: Option<usize>,
    /// Gaussian noise for moons.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(value_enum)]
    pub name: GenKind,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "median")]
    pub sigma_heuristic: Heuristic,
    #[arg(long, default_value_t = 0.25)]
    pub eps: f64,
    #[arg(long, value_enum, default_value = "l2")]
    pub norm: Norm,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = PgaConfig::DEFAULT_ITERATIONS)]
    pub iters: usize,
    /// Directory for the CSV outputs.
    #[arg(long, default_value = "demo-out")]
    pub out: PathBuf,
    /// Report path (default: <out>/<name>.report.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub report: PathBuf,
}
