//! `simusr`: build pseudo-pairs, train offline, run the online baseline,
//! super-resolve, evaluate and benchmark.
//!
//! Exit codes: 0 success, 1 internal or I/O failure, 2 missing input path,
//! 3 invalid arguments or configuration conflict, 4 non-finite values,
//! 5 corrupt or unreadable file.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simusr::denoise::DenoiseSetting;
use simusr::pairs::{AugmentPolicy, DenoiseOrder};
use simusr::resample::Kernel;
use simusr::{ColorMode, Error};

#[derive(Parser, Debug)]
#[command(name = "simusr", version, about = "Unsupervised super-resolution from pseudo-pairs")]
struct Cli {
    /// Threads for data-stage parallelism; never changes results.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub(crate) struct Common {
    /// Plain-text `key=value` config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the experiment manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a pseudo-pair set from a directory of LR PNGs.
    BuildPairs(BuildPairsArgs),
    /// Train the network offline on a pair set.
    Train(TrainArgs),
    /// Train on the test image itself, then super-resolve it.
    Zssr(ZssrArgs),
    /// Super-resolve a PNG or a directory of PNGs with a checkpoint.
    Infer(InferArgs),
    /// Compare SR images against references (PSNR / SSIM CSV).
    Eval(EvalArgs),
    /// Time online training against offline inference.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub(crate) struct BuildPairsArgs {
    /// Directory of LR PNG images.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scale: Option<u32>,
    /// `keys:<a>`, `bicubic`, `box` or `gauss:<sigma>`.
    #[arg(long)]
    kernel: Option<Kernel>,
    /// Disable the anti-aliasing low-pass when deriving sons.
    #[arg(long)]
    no_antialias: bool,
    /// `off`, `auto` or `sigma=<v>`.
    #[arg(long)]
    denoise: Option<DenoiseSetting>,
    /// `father-first` or `son-after`.
    #[arg(long)]
    denoise_order: Option<DenoiseOrder>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub(crate) struct ModelArgs {
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
}

#[derive(Args, Debug)]
pub(crate) struct TrainArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Checkpoint to write.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Loss CSV (defaults to the checkpoint path with a `.csv` extension).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Must match the pair set when given.
    #[arg(long)]
    scale: Option<u32>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr_patch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Halve the learning rate every this fraction of the steps.
    #[arg(long)]
    halve_every: Option<f64>,
    /// `off`, `geo` or `moa`.
    #[arg(long)]
    augment: Option<AugmentPolicy>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub(crate) struct ZssrArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    scale: Option<u32>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_patch: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Steps per window of the plateau rule.
    #[arg(long)]
    plateau: Option<usize>,
    #[arg(long)]
    denoise: Option<DenoiseSetting>,
    #[arg(long)]
    kernel: Option<Kernel>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub(crate) struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// A PNG file or a directory of PNGs.
    #[arg(long)]
    input: PathBuf,
    /// Output PNG (or directory when the input is one).
    #[arg(long)]
    out: PathBuf,
    /// Fails before any compute if the checkpoint scale differs.
    #[arg(long)]
    scale: Option<u32>,
    #[arg(long)]
    denoise: Option<DenoiseSetting>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub(crate) struct EvalArgs {
    sr: PathBuf,
    reference: PathBuf,
    /// `y` or `rgb`.
    #[arg(long)]
    mode: Option<ColorMode>,
    #[arg(long)]
    shave: Option<usize>,
    /// Also write the CSV here (it always goes to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub(crate) struct BenchArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    scale: Option<u32>,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    zssr_steps: Option<usize>,
    #[arg(long)]
    zssr_lr_patch: Option<usize>,
    /// Timed inference runs (at least 3).
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    zssr_repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON report path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NotFound(_) => 2,
                Error::InvalidArgument(_)
                | Error::ShapeMismatch(_)
                | Error::TooSmall(_)
                | Error::ScaleMismatch { .. } => 3,
                Error::NonFinite(_) => 4,
                Error::Corrupt { .. } | Error::Decode { .. } | Error::UnsupportedFormat(_) => 5,
                Error::Io { .. } | Error::Encode { .. } => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(3);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::BuildPairs(a) => commands::build_pairs(a),
        Command::Train(a) => commands::train(a),
        Command::Zssr(a) => commands::zssr(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
