//! Command-line entry point: synthetic pair generation, training,
//! estimation, evaluation, ablations and ghost-overlay visualization.

mod commands;
mod config;
mod error;
mod imagery;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::{usage, CliError};

#[derive(Parser)]
#[command(
    name = "homalign",
    version,
    about = "Content-aware unsupervised homography estimation",
    after_help = "Runs are deterministic given --seed and the resolved config; \
                  every run writes config_resolved.toml next to its outputs."
)]
struct Cli {
    /// Configuration file (TOML with sections per subsystem).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config value, e.g. --set train.iterations=500.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory for artifacts and the config snapshot.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Shorthand that sets the train, data and ransac seeds at once.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic pairs with ground truth, annotations and a manifest.
    Generate {
        /// Number of pairs to write.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Train a model on the synthetic stream; writes model.bin and the log.
    Train,
    /// Estimate the homography between two images with a trained model.
    Estimate {
        #[arg(long, value_name = "IMAGE")]
        image_a: PathBuf,
        #[arg(long, value_name = "IMAGE")]
        image_b: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Also write a ghost overlay of the aligned pair.
        #[arg(long, value_name = "IMAGE")]
        overlay: Option<PathBuf>,
    },
    /// Score an estimator on held-out pairs (eval.method picks which).
    Evaluate {
        /// Model checkpoint (required when eval.method = model).
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every ablation arm on shared data.
    Ablate,
    /// Mix two images into the ghost overlay (red target, cyan warped).
    Visualize {
        #[arg(long, value_name = "IMAGE")]
        image_a: PathBuf,
        #[arg(long, value_name = "IMAGE")]
        image_b: PathBuf,
        /// Warp image_a with a model estimate before mixing.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "IMAGE", default_value = "ghost.png")]
        out_image: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = config::load(cli.config.as_deref(), &cli.overrides).map_err(usage)?;
    commands::apply_seed(&mut config, cli.seed);
    match &cli.command {
        Command::Generate { count } => commands::generate(&config, &cli.out, *count),
        Command::Train => commands::train_cmd(&config, &cli.out),
        Command::Estimate { image_a, image_b, checkpoint, overlay } => {
            commands::estimate(&config, image_a, image_b, checkpoint, overlay.as_deref())
        }
        Command::Evaluate { checkpoint } => {
            commands::evaluate_cmd(&config, &cli.out, checkpoint.as_deref())
        }
        Command::Ablate => commands::ablate(&config, &cli.out),
        Command::Visualize { image_a, image_b, checkpoint, out_image } => {
            commands::visualize(&config, image_a, image_b, checkpoint.as_deref(), out_image)
        }
    }
}

fn main() -> ExitCode {
    // clap itself exits with code 2 on unparseable arguments.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
