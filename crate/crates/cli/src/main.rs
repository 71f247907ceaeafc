//! `gestrec`: synthetic gesture datasets, CNN fine-tuning, feature
//! extraction, bidirectional IndRNN training, evaluation, Grad-CAM, and
//! ribbon plots, glued together over plain files.
//!
//! Exit codes: 0 success, 2 usage error, 3 data/contract error, 4 numeric
//! divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gestrec_cli::{commands, config, Ctx};

#[derive(Parser)]
#[command(
    name = "gestrec",
    version,
    about = "Frame-wise gesture recognition toolkit (synthetic data, CNN features, bidirectional IndRNN, Grad-CAM, metrics)"
)]
struct Cli {
    /// Flat key=value config file (# comments); command-line flags override.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for this command's generator.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for batch parallelism. Results are bitwise identical
    /// for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (feature sequences or image sequences).
    Synth(commands::synth::SynthArgs),
    /// Fine-tune the convolutional feature extractor on frame images.
    TrainCnn(commands::train_cnn::TrainCnnArgs),
    /// Run the extractor over every frame and write per-trial feature files.
    ExtractFeatures(commands::extract::ExtractArgs),
    /// Train the sequence labeling model on per-trial feature files.
    TrainRnn(commands::train_rnn::TrainRnnArgs),
    /// Evaluate checkpoints: confusion matrix, summary statistics, ribbons.
    Eval(commands::eval::EvalArgs),
    /// Class activation heatmap and overlay for one image.
    Gradcam(commands::gradcam::GradcamArgs),
    /// Ribbon plot from two label files.
    Ribbon(commands::ribbon::RibbonArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()?;
    }
    let ctx = Ctx {
        file: config::FileConfig::load(cli.config.as_deref())?,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Synth(args) => commands::synth::run(&ctx, args),
        Command::TrainCnn(args) => commands::train_cnn::run(&ctx, args),
        Command::ExtractFeatures(args) => commands::extract::run(&ctx, args),
        Command::TrainRnn(args) => commands::train_rnn::run(&ctx, args),
        Command::Eval(args) => commands::eval::run(&ctx, args),
        Command::Gradcam(args) => commands::gradcam::run(&ctx, args),
        Command::Ribbon(args) => commands::ribbon::run(&ctx, args),
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    use gestrec_core::Error;
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<Error>() {
            return match core {
                Error::Diverged { .. } | Error::NonFinite { .. } => 4,
                _ => 3,
            };
        }
    }
    if err.to_string().starts_with("usage:") {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
