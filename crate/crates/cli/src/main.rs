use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rankprobe_cli::commands::{cmd_analyze, cmd_correlate, cmd_train};
use rankprobe_cli::{CliError, Overrides};

/// Train small networks with rank-driven learning rates, probe weight
/// checkpoints, and correlate network quality with accuracy.
#[derive(Parser)]
#[command(name = "probe", version)]
struct Cli {
    /// Worker threads for per-layer factorization (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (overrides the manifest's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// SGD momentum.
        #[arg(long)]
        alpha: Option<f64>,
        /// Learning-rate momentum.
        #[arg(long)]
        beta: Option<f64>,
        /// Gain on the stable-rank change.
        #[arg(long)]
        zeta: Option<f64>,
        /// Initial learning rate.
        #[arg(long)]
        eta0: Option<f64>,
    },
    /// Measure every 2-D and 4-D tensor of a checkpoint archive.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Glob on tensor names; may be repeated.
        #[arg(long)]
        filter: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-group Pearson and Spearman correlations of Q against accuracy.
    Correlate {
        #[arg(long)]
        table: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("field `threads`: {e}")))?;
    }
    match cli.command {
        Command::Train {
            manifest,
            out,
            seed,
            alpha,
            beta,
            zeta,
            eta0,
        } => {
            let overrides = Overrides {
                seed,
                alpha,
                beta,
                zeta,
                eta0,
            };
            cmd_train(&manifest, out.as_deref(), &overrides).map(|_| ())
        }
        Command::Analyze {
            checkpoint,
            filter,
            out,
        } => cmd_analyze(&checkpoint, &filter, &out).map(|_| ()),
        Command::Correlate { table } => cmd_correlate(&table).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PROBE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("probe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
