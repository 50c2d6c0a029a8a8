use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use prodehaze_cli::commands::{
    cmd_ablate, cmd_dehaze, cmd_eval, cmd_mask, cmd_prompt, cmd_synth, cmd_train, Method, Stage,
};
use prodehaze_cli::config::RunConfig;
use prodehaze_cli::error::Result;

/// Toy dehazing pipeline: haze synthesis, structural prompts, haze-aware
/// masks, diffusion restorer training, and reference-metric evaluation.
#[derive(Parser)]
#[command(name = "prodehaze", version, about)]
struct Cli {
    /// JSON run configuration (defaults are used when omitted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed override (wins over the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override; for `eval` this is the report path stem
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hazy/clean dataset under the dataset root
    Synth,
    /// Emit the high-frequency structural prompt for every hazy input
    Prompt,
    /// Emit DCP masks and per-window sparse attention masks
    Mask,
    /// Restore every hazy input with the chosen method
    Dehaze {
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Train one toy pipeline stage
    TrainToy {
        #[arg(long, value_enum)]
        stage: Stage,
        /// Use clean-image latents instead of sampling from the restorer
        #[arg(long)]
        teacher_forced: bool,
    },
    /// Full-reference metrics between two image directories
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Train and evaluate the four {±prompt, ±mask} configurations
    Ablate,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply_overrides(cli.seed, cli.out.as_deref());
    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Prompt => cmd_prompt(&cfg),
        Command::Mask => cmd_mask(&cfg),
        Command::Dehaze { method } => cmd_dehaze(&cfg, method).map(|_| ()),
        Command::TrainToy {
            stage,
            teacher_forced,
        } => cmd_train(&cfg, stage, teacher_forced),
        Command::Eval { pred, gt } => {
            let stem = cli
                .out
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join("report"));
            cmd_eval(&pred, &gt, &stem).map(|_| ())
        }
        Command::Ablate => cmd_ablate(&cfg).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter("PRODEHAZE_LOG")
            .default_filter_or("info"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_report_json());
            ExitCode::FAILURE
        }
    }
}
