use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use pipeplan_api::{router, ApiConfig, AppState};

#[derive(Parser)]
#[command(name = "pipeplan-api", version, about = "Pipeline search service")]
struct Args {
    #[arg(long, env = "PIPEPLAN_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Directory holding the journal and model artifacts.
    #[arg(long, env = "PIPEPLAN_JOURNAL_DIR", default_value = "pipeplan-data")]
    journal_dir: PathBuf,
    /// Evaluation workers per job; 0 uses every core.
    #[arg(long, env = "PIPEPLAN_WORKERS", default_value_t = 0)]
    workers: usize,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("PIPEPLAN_LOG").unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    let app = AppState::open(ApiConfig { journal_dir: args.journal_dir, workers: args.workers })?;
    let listener = tokio::net::TcpListener::bind(args.listen).await?;
    tracing::info!(addr = %args.listen, "listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
