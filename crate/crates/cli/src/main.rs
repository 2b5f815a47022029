//! `mfish`: codebook generation, channel fitting, decoding, prior sweeps,
//! assignment optimization and simulation, each driven by files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "mfish",
    version,
    about = "Multiplexed FISH code design and decoding"
)]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON options file or an earlier run's manifest; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the 140-word MHD4 codebook.
    GenCodebook(GenCodebookArgs),
    /// Fit per-round two-component mixtures to an intensity table.
    Fit(FitArgs),
    /// Build a decoder, report exact performance and decode data.
    Decode(DecodeArgs),
    /// FDR and mismatch distributions over symmetric Dirichlet priors.
    Sweep(SweepArgs),
    /// Evolve code assignments to minimize mean FDR.
    Optimize(OptimizeArgs),
    /// Draw a synthetic intensity table with ground truth.
    Simulate(SimulateArgs),
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenCodebookArgs {
    /// Output TSV [default: codebook.tsv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// Intensity CSV.
    #[arg(long)]
    pub intensities: Option<PathBuf>,
    /// Channel parameter JSON [default: channel.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// QQ diagnostics CSV [default: fit_diagnostics.csv next to --out]
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// QQ points per component [default: 99]
    #[arg(long)]
    pub qq_grid: Option<usize>,
    /// Relative log-likelihood tolerance [default: 1e-8]
    #[arg(long)]
    pub tol: Option<f64>,
    /// [default: 500]
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Lower bound on fitted sigmas [default: 0.001]
    #[arg(long)]
    pub sigma_floor: Option<f64>,
    /// Extra random EM starts per column [default: 0]
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Flag columns with mu1 - mu0 below this [default: 0.5]
    #[arg(long)]
    pub separation_floor: Option<f64>,
    #[arg(skip)]
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeArgs {
    /// Codebook TSV.
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// Prior CSV; its order defines the molecules.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Channel parameter JSON.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Molecule-to-code TSV [default: molecules take codebook rows in order]
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    /// mle, map, mapq:<q>, moffitt or moffitt-mle [default: map]
    #[arg(long)]
    pub kind: Option<String>,
    /// Reject threshold; turns `map` into MAP_q.
    #[arg(long)]
    pub q: Option<f64>,
    /// Binary sequences to decode, one per line.
    #[arg(long, conflicts_with = "intensities")]
    pub bits: Option<PathBuf>,
    /// Intensity CSV to decode.
    #[arg(long)]
    pub intensities: Option<PathBuf>,
    /// Decode intensities without quantization.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub soft: Option<bool>,
    /// Output directory [default: decode_out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(skip)]
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArgs {
    /// Codebook TSV.
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// Channel parameter JSON with p01/p10 (or Gaussian parameters and w1).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Comma-separated concentrations [default: 1e-3,1e-2,0.1,1,10,100,1e3]
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    /// Prior draws per alpha [default: 20]
    #[arg(long)]
    pub draws: Option<usize>,
    /// Comma-separated decoder kinds [default: map,mle]
    #[arg(long, value_delimiter = ',')]
    pub decoders: Option<Vec<String>>,
    /// Molecules per prior [default: codebook size]
    #[arg(long)]
    pub molecules: Option<usize>,
    /// uniform-mismatch or uniform-misdecode [default: uniform-mismatch]
    #[arg(long)]
    pub mismatch: Option<String>,
    /// Output directory [default: sweep_out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(skip)]
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Channel parameter JSON with p01/p10 (or Gaussian parameters and w1).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// [default: 64]
    #[arg(long)]
    pub population: Option<usize>,
    /// [default: 50]
    #[arg(long)]
    pub generations: Option<usize>,
    /// Per-molecule swap probability [default: 0.05]
    #[arg(long)]
    pub mutation_prob: Option<f64>,
    /// Decoder whose mean FDR is minimized [default: map]
    #[arg(long)]
    pub decoder: Option<String>,
    /// include-unused or used-only [default: include-unused]
    #[arg(long)]
    pub pool: Option<String>,
    /// Output directory [default: optimize_out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(skip)]
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Channel parameter JSON with Gaussian parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    /// Rows to draw [default: 250000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Output CSV [default: intensities.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    #[serde(default)]
    pub seed: Option<u64>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<mfish_core::Error>())
        .any(mfish_core::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let cfg = cli.config.as_deref();
    match &cli.command {
        Command::GenCodebook(a) => {
            commands::gen_codebook(config::merge("gen-codebook", a, cfg, cli.seed)?)
        }
        Command::Fit(a) => commands::fit(config::merge("fit", a, cfg, cli.seed)?),
        Command::Decode(a) => commands::decode(config::merge("decode", a, cfg, cli.seed)?),
        Command::Sweep(a) => commands::sweep(config::merge("sweep", a, cfg, cli.seed)?),
        Command::Optimize(a) => commands::optimize(config::merge("optimize", a, cfg, cli.seed)?),
        Command::Simulate(a) => commands::simulate(config::merge("simulate", a, cfg, cli.seed)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
