//! `ddsm`: generate synthetic tomography data, train the reconstruction
//! network, and run reconstructions and the classical diagnostics.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddsm_core::Scenario;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "ddsm", version, about = "Deep direct sampling for diffusive optical tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw random inclusions, simulate Cauchy data and write a dataset.
    Generate(GenerateArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Reconstruct one sample with a trained network.
    Reconstruct(ReconstructArgs),
    /// Classical direct sampling index from a single Cauchy pair.
    Dsm(DsmArgs),
    /// Truncated Picard series of the Neumann-to-Dirichlet difference.
    Picard(PicardArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long, default_value = "circles2d")]
    scenario: Scenario,
    /// Nodes per axis.
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value_t = 10)]
    n_pairs: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Sample `i` is drawn with seed `seed + i`.
    #[arg(long, env = "DDSM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    mu0: f64,
    #[arg(long, default_value_t = 50.0)]
    mu1: f64,
    /// Order of the boundary operator applied to the data (0 or 1).
    #[arg(long, default_value_t = 0)]
    s: u8,
    /// Noise on the training data; refused unless --train-noise is given.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    train_noise: bool,
    /// Keep the fluxes at this many points per side only.
    #[arg(long)]
    limited: Option<usize>,
    /// Primitives per sample instead of the scenario default.
    #[arg(long)]
    primitives: Option<usize>,
    /// Draw the primitive count uniformly from 1..=count.
    #[arg(long)]
    vary_count: bool,
    /// Worker threads for sample generation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Architecture preset: desk (8/16/32) or full (32/64/128).
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Encoder widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Output activation: sigmoid or relu.
    #[arg(long)]
    head: Option<String>,
    #[arg(long, env = "DDSM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV; defaults to the model path with extension `loss.csv`.
    #[arg(long)]
    loss: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset holding the sample; without it a fresh sample is drawn.
    #[arg(long, requires = "index")]
    data: Option<PathBuf>,
    #[arg(long)]
    index: Option<usize>,
    /// Seed of a fresh sample.
    #[arg(long, env = "DDSM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "circles2d")]
    scenario: Scenario,
    /// Test-time noise level on the measured potentials.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    limited: Option<usize>,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    mu1: Option<f64>,
    /// Output prefix; writes `<out>.pred.{pgm,csv}` and `<out>.truth.{pgm,csv}`.
    #[arg(long, default_value = "recon")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct DsmArgs {
    #[arg(long, default_value = "circles2d")]
    scenario: Scenario,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, env = "DDSM_SEED", default_value_t = 0)]
    seed: u64,
    /// Cauchy pair used, within a basis of --n-pairs fluxes.
    #[arg(long, default_value_t = 1)]
    omega: usize,
    #[arg(long, default_value_t = 1)]
    n_pairs: usize,
    #[arg(long, default_value_t = 0.0)]
    mu0: f64,
    #[arg(long, default_value_t = 50.0)]
    mu1: f64,
    /// Order of the boundary operator in the duality product (0 or 1).
    #[arg(long, default_value_t = 1)]
    s: u8,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value = "dsm")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PicardArgs {
    #[arg(long, default_value = "circles2d")]
    scenario: Scenario,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, env = "DDSM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    n_pairs: usize,
    /// Series truncation; defaults to --n-pairs.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    mu0: f64,
    #[arg(long, default_value_t = 50.0)]
    mu1: f64,
    /// Basis size as a multiple of --n-pairs.
    #[arg(long, default_value_t = 3)]
    oversample: usize,
    #[arg(long, default_value = "picard")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Dsm(a) => commands::dsm(a),
        Command::Picard(a) => commands::picard(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code())
        }
    }
}
