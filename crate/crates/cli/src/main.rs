mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Meta-learned initialization for implicit neural video representations.
#[derive(Parser, Debug)]
#[command(name = "metanerv", version)]
struct Cli {
    /// TOML run configuration; unset fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write seeded synthetic train/test videos and a manifest.
    GenDataset {
        #[arg(long)]
        out: PathBuf,
    },
    /// Meta-train an initialization over the training split of a dataset.
    MetaTrain(MetaTrainArgs),
    /// Fit an initialization to one video with plain gradient steps.
    Adapt(AdaptArgs),
    /// Prune, quantize and entropy-code a fitted checkpoint.
    Compress(CompressArgs),
    /// Restore a checkpoint from a compressed container.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a noisy copy of a video and score it against the clean one.
    DenoiseEval(DenoiseArgs),
}

#[derive(Args, Debug)]
pub struct MetaTrainArgs {
    /// Dataset directory written by gen-dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-outer-step log.
    #[arg(long)]
    log: PathBuf,
    /// Total outer steps; overrides meta.outer_steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Supervise only the final header.
    #[arg(long)]
    no_spatial: bool,
    /// Use every frame from the first outer step.
    #[arg(long)]
    no_progressive: bool,
    /// Continue from a meta-training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    #[arg(long)]
    video: PathBuf,
    /// Initialization; learned inner rates are used when present.
    #[arg(
        long,
        required_unless_present = "random_init",
        conflicts_with = "random_init"
    )]
    checkpoint: Option<PathBuf>,
    /// Start from a seeded random initialization.
    #[arg(long)]
    random_init: bool,
    #[arg(long)]
    steps: Option<usize>,
    /// Adapted checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-step metrics (step, psnr, ms_ssim).
    #[arg(long)]
    csv: PathBuf,
    /// Directory for the reconstructed frames as PNG.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Video the checkpoint was fitted to.
    #[arg(long)]
    video: PathBuf,
    /// Receives one container and one JSON report per ratio.
    #[arg(long)]
    out_dir: PathBuf,
    /// Pruning ratios, comma separated; overrides compress.ratios.
    #[arg(long, value_delimiter = ',')]
    ratio: Option<Vec<f64>>,
    #[arg(long)]
    bits: Option<u32>,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    /// Clean video.
    #[arg(long)]
    video: PathBuf,
    /// Initialization; a seeded random one when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    report: PathBuf,
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("METANERV_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("METANERV_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    let cfg = config::RunConfig::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::GenDataset { out } => commands::gen_dataset(&cfg, &out),
        Command::MetaTrain(a) => commands::meta_train(cfg, &a),
        Command::Adapt(a) => commands::adapt(cfg, &a),
        Command::Compress(a) => commands::compress(cfg, &a),
        Command::Decompress { input, out } => commands::decompress(&input, &out),
        Command::DenoiseEval(a) => commands::denoise_eval(cfg, &a),
    }
}
