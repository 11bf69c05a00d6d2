//! `mega` command-line tool.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "mega",
    version,
    about = "Moment estimator gaps for latent variable generative models"
)]
struct Cli {
    /// Base RNG seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "mega-out")]
    out: PathBuf,
    /// Monte Carlo draws for model moments; 0 uses exact moments. Each
    /// subcommand has its own default.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Fit a GMM or pPCA model to a dataset.
    Fit(FitArgs),
    /// MEGA of one model (or conditional-moment file) against a dataset.
    Mega(MegaArgs),
    /// Rank several models by MEGA on one dataset.
    Compare(CompareArgs),
    /// Select the number of GMM components by AIC and the MEGA-penalized likelihood.
    Select(SelectArgs),
    /// Regularization path over a list of α values.
    Path(PathArgs),
    /// FME-vs-SE accuracy as a function of m.
    GapStudy(GapStudyArgs),
    /// Empirical variance of the FME and SE over replications.
    VarianceStudy(VarianceStudyArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// three_cluster, moons or custom_gmm.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    /// Moons noise standard deviation.
    #[arg(long, default_value_t = mega::datagen::DEFAULT_MOONS_NOISE)]
    noise: f64,
    /// Generator model file for custom_gmm.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Family {
    Gmm,
    Ppca,
}

#[derive(Args, Debug, Clone)]
struct EmArgs {
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-6)]
    variance_floor: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Family::Gmm)]
    family: Family,
    /// Mixture components (gmm).
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Latent dimension (ppca).
    #[arg(long, default_value_t = 1)]
    latent_dim: usize,
    #[command(flatten)]
    em: EmArgs,
}

#[derive(Args, Debug)]
struct MegaArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, conflicts_with = "cms", required_unless_present = "cms")]
    model: Option<PathBuf>,
    /// Conditional-moment sample file.
    #[arg(long)]
    cms: Option<PathBuf>,
    /// Use exact model moments (model files only).
    #[arg(long, conflicts_with = "cms")]
    exact: bool,
    /// Also write the drawn conditional-moment sample (model files, MC mode).
    #[arg(long)]
    save_cms: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model files (at least two).
    #[arg(long = "model", required = true, num_args = 1..)]
    models: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    #[command(flatten)]
    em: EmArgs,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    /// Single α; the default grid is used when omitted.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct PathArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    /// Ascending α values (comma separated); defaults to the calibration grid.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Repeat the sweep with this many fit seeds and report the smallest
    /// positive α whose selection agrees across all of them.
    #[arg(long, default_value_t = 1)]
    calibration_seeds: usize,
}

#[derive(Args, Debug)]
struct GapStudyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated m grid.
    #[arg(long, value_delimiter = ',', default_values_t = mega::experiments::DEFAULT_GAP_M_VALUES)]
    m_values: Vec<usize>,
    #[arg(long, default_value_t = mega::experiments::DEFAULT_GAP_SEEDS)]
    n_seeds: usize,
}

#[derive(Args, Debug)]
struct VarianceStudyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    replications: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        anyhow::ensure!(t >= 1, "--threads must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let ctx = commands::Context {
        seed: cli.seed,
        out: cli.out,
        m: cli.m,
    };
    match cli.command {
        Command::GenData(a) => commands::gen_data(&ctx, a),
        Command::Fit(a) => commands::fit(&ctx, a),
        Command::Mega(a) => commands::mega(&ctx, a),
        Command::Compare(a) => commands::compare(&ctx, a),
        Command::Select(a) => commands::select(&ctx, a),
        Command::Path(a) => commands::path(&ctx, a),
        Command::GapStudy(a) => commands::gap_study(&ctx, a),
        Command::VarianceStudy(a) => commands::variance_study(&ctx, a),
    }
}
