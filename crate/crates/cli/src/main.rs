use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pipeplan_cli::{classify, run, CliError, RunConfig, RunFlags, EXIT_OK};

#[derive(Parser)]
#[command(name = "pipeplan", version, about = "Planning-guided ML pipeline search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run model selection, pipeline learning and the parameter sweep.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `[output] dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluation workers; 0 uses every core.
        #[arg(long)]
        workers: Option<usize>,
        /// Suppress the report on stdout.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Predict labels for a CSV with a saved model artifact.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("PIPEPLAN_LOG"))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Run { config, out, seed, workers, quiet } => RunConfig::load(&config).and_then(|c| {
            let (outcome, dir) = run(c, &RunFlags { seed, workers, out_dir: out })?;
            if !quiet {
                print!("{}", outcome.report.to_markdown());
            }
            eprintln!("wrote {}", dir.display());
            Ok(())
        }),
        Command::Classify { model, data } => {
            let stdout = std::io::stdout();
            classify(&model, &data, &mut stdout.lock()).map(|_| ())
        }
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e))
        }
    }
}
