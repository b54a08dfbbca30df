use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_hmc::models::Family;

#[derive(Debug, Parser)]
#[command(name = "latent-hmc", version, about = "HMC inference for latent-variable models of categorical data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Sample a model's posterior and write draws plus a manifest.
    Fit(FitArgs),
    /// Summarize draws, optionally against ground truth.
    Diagnose(DiagnoseArgs),
    /// Match topics between two runs and report their concordance.
    Compare(CompareArgs),
    /// Run a simulation study end to end.
    Study(StudyArgs),
    /// Re-run a fit from its manifest and check the draws are identical.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimModel {
    Stm,
    Dsr,
    Slda,
    Lda,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: SimModel,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Respondents per period as a fraction of 10,000 (dsr only).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Lda,
    Stm,
    Dsr,
    Slda,
    Sslda,
}

impl FamilyArg {
    pub fn family(self) -> Family {
        match self {
            FamilyArg::Lda => Family::Lda,
            FamilyArg::Stm => Family::Stm,
            FamilyArg::Dsr => Family::Dsr,
            FamilyArg::Slda => Family::Slda,
            FamilyArg::Sslda => Family::Sslda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Nuts,
    Ld,
    Gibbs,
}

impl SamplerArg {
    pub fn name(self) -> &'static str {
        match self {
            SamplerArg::Nuts => "nuts",
            SamplerArg::Ld => "ld",
            SamplerArg::Gibbs => "gibbs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SamplerArg::Nuts, SamplerArg::Ld, SamplerArg::Gibbs].into_iter().find(|v| v.name() == s)
    }
}

fn key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: FamilyArg,
    #[arg(long, value_enum, default_value = "nuts")]
    pub sampler: SamplerArg,
    /// Directory holding dtm.csv (+ covariates.csv) or survey.csv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    /// Warmup iterations (burn-in sweeps for gibbs).
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of topics or types; defaults to the truth file's, else the family default.
    #[arg(long)]
    pub k: Option<usize>,
    /// Hyperparameter override, e.g. `--set eta=0.2`.
    #[arg(long = "set", value_parser = key_value)]
    pub overrides: Vec<(String, String)>,
    /// Langevin step size, fixed unless `--target-accept` is given.
    #[arg(long, default_value_t = 0.01)]
    pub step_size: f64,
    /// Tune the Langevin step during warmup toward this acceptance rate.
    #[arg(long)]
    pub target_accept: Option<f64>,
    #[arg(long, env = "LATENT_HMC_JOBS", default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    /// Run directory (or its samples.csv).
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Parameters entering the error summary.
    #[arg(long, value_delimiter = ',', default_value = "theta")]
    pub params: Vec<String>,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub run_a: PathBuf,
    #[arg(long)]
    pub run_b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyName {
    StmSim,
    DsrSim,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[arg(long, value_enum)]
    pub name: StudyName,
    #[arg(long, default_value_t = 50)]
    pub replications: usize,
    /// Survey size relative to 10,000 respondents per period (dsr-sim).
    #[arg(long, default_value_t = 0.05)]
    pub scale: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub hmc_draws: Option<usize>,
    #[arg(long)]
    pub hmc_warmup: Option<usize>,
    #[arg(long)]
    pub ld_draws: Option<usize>,
    #[arg(long)]
    pub ld_warmup: Option<usize>,
    #[arg(long)]
    pub gibbs_draws: Option<usize>,
    #[arg(long, env = "LATENT_HMC_JOBS", default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "LATENT_HMC_JOBS", default_value_t = 0)]
    pub jobs: usize,
}
