//! `bless`: simulate, fit and audit binary latent star-forest models.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit codes shared by all subcommands.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const INPUT: u8 = 2;
    pub const NOT_CONVERGED: u8 = 3;
    pub const NON_IDENTIFIABLE_GRAPH: u8 = 4;
    pub const NO_EVIDENCE: u8 = 5;
    pub const PRECONDITION: u8 = 6;
}

#[derive(Parser, Debug)]
#[command(name = "bless", version, about = "Binary latent star-forest models: simulation, EM fitting and identifiability checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a random model and a dataset from it.
    Simulate(SimulateArgs),
    /// Fit a model by EM, with the graph known or estimated.
    Fit(FitArgs),
    /// Classify a graphical matrix by its per-latent child counts.
    CheckGraph(CheckGraphArgs),
    /// Chi-square tests of identifiability for latents with two children.
    TestId(TestIdArgs),
    /// Build a family of parameter sets sharing the model's response pmf.
    ConstructAlt(ConstructAltArgs),
    /// Run one of the bundled experiments.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct OutDir {
    /// Directory for all outputs, created if missing.
    #[arg(long, default_value = "bless-out")]
    pub out_dir: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum GraphTemplate {
    /// `(I_K; I_K)`, p = 2K.
    TwoChildren,
    /// `(I_K; I_K; I_K)`, p = 3K.
    ThreeChildren,
    /// Item j has parent j mod K.
    Cyclic,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Number of items; implied by the two- and three-children templates.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub d: usize,
    /// Number of subjects.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Graphical matrix file (JSON rows, `{"g": rows}`, or 0/1 text rows).
    #[arg(long, conflicts_with = "g_template")]
    pub g_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub g_template: Option<GraphTemplate>,
    /// Make this latent (1-based) independent of the others.
    #[arg(long)]
    pub surface_latent: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub theta_gap_min: f64,
    #[arg(long, default_value_t = 0.01)]
    pub nu_floor: f64,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Args, Debug)]
pub struct EmArgs {
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Graph search: use posterior expectations instead of sampled patterns.
    #[arg(long)]
    pub soft_gamma: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Dataset CSV (header y1..yp, categories 1..d).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub d: usize,
    /// Number of latents; taken from the graph when one is given.
    #[arg(long)]
    pub k: Option<usize>,
    /// Known graphical matrix; the graph is estimated when omitted.
    #[arg(long)]
    pub g_file: Option<PathBuf>,
    #[command(flatten)]
    pub em: EmArgs,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Args, Debug)]
pub struct CheckGraphArgs {
    #[arg(long)]
    pub g_file: PathBuf,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum StrategyArg {
    FullComplement,
    Pairwise,
}

#[derive(Args, Debug)]
pub struct TestIdArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub g_file: PathBuf,
    /// Latent to test (1-based).
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    pub latent: Option<usize>,
    /// Test every latent with exactly two children.
    #[arg(long)]
    pub all: bool,
    #[arg(long, value_enum, default_value_t = StrategyArg::FullComplement)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub bonferroni: bool,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum AltMode {
    /// Perturb the only child of a latent.
    Prop1,
    /// Perturb a two-children latent that is independent of the others.
    Thm2b,
}

#[derive(Args, Debug)]
pub struct ConstructAltArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub mode: AltMode,
    /// Item (1-based) for prop1.
    #[arg(long, required_if_eq("mode", "prop1"))]
    pub item: Option<usize>,
    /// Latent (1-based) for thm2b.
    #[arg(long, required_if_eq("mode", "thm2b"))]
    pub latent: Option<usize>,
    #[arg(long, default_value_t = 150)]
    pub count: usize,
    #[arg(long, default_value_t = 0.03)]
    pub radius: f64,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum ExperimentName {
    Prop1Figure,
    BlessingMse,
    SurfaceNonid,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub name: ExperimentName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// blessing-mse: number of true parameter sets.
    #[arg(long, default_value_t = 10)]
    pub models: usize,
    /// blessing-mse: datasets per parameter set.
    #[arg(long, default_value_t = 20)]
    pub datasets: usize,
    /// blessing-mse: subjects per dataset.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// blessing-mse: EM restarts per dataset.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Family experiments: number of alternatives.
    #[arg(long, default_value_t = 150)]
    pub count: usize,
    /// Family experiments: perturbation radius (0.05 for prop1-figure,
    /// 0.03 for surface-nonid when omitted).
    #[arg(long)]
    pub radius: Option<f64>,
    #[command(flatten)]
    pub out: OutDir,
}

fn init_threads() -> Result<(), String> {
    if let Ok(v) = std::env::var("BLESS_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| format!("BLESS_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(exit::INPUT);
    }
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(fail) => {
            eprintln!("error: {:#}", fail.error);
            ExitCode::from(fail.code)
        }
    }
}
