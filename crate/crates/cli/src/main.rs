use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssdn_core::experiment::{run, ExperimentConfig, ExperimentKind, RunOptions};

/// Train, evaluate and analyse self-supervised dynamic networks.
#[derive(Parser)]
#[command(name = "ssdn", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed, save checkpoints and evaluate them.
    Train(Common),
    /// Evaluate a regime on the clean and corrupted test sets.
    Eval(Common),
    /// Per-block CKA between reference and block-tuned models.
    Sensitivity(Common),
    /// Train and evaluate the seven bridge-placement variants.
    Ablation(Common),
    /// Project the predicted bridge signals and score shift clustering.
    Alphas(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment description.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; must not exist yet.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// No progress output.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Train(a) => (ExperimentKind::Train, a),
        Command::Eval(a) => (ExperimentKind::Eval, a),
        Command::Sensitivity(a) => (ExperimentKind::Sensitivity, a),
        Command::Ablation(a) => (ExperimentKind::Ablation, a),
        Command::Alphas(a) => (ExperimentKind::Alphas, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(kind: ExperimentKind, args: Common) -> Result<(), Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("cannot read `{}`: {e}", args.config.display()))?;
    let cfg = ExperimentConfig::from_toml(&text).map_err(|e| format!("{}: {e}", args.config.display()))?;
    let opts = RunOptions { kind: Some(kind), out_dir: args.out, seed: args.seed, quiet: args.quiet };
    let summary = run(cfg, &opts)?;
    if !args.quiet {
        eprintln!("wrote {} rows to {}", summary.rows.len(), summary.out_dir.join("metrics.csv").display());
    }
    Ok(())
}
