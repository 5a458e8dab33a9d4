use std::path::PathBuf;

use clap::Parser;
use slicefab_server::{serve, ServerConfig};
use tracing_subscriber::EnvFilter;

/// Slice orchestration service.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// TOML config file. Without one the bench infrastructure is served.
    /// The listen address can be overridden with SLICEFAB_LISTEN.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sleep for modeled spawn times instead of advancing virtual time.
    #[arg(long)]
    realtime: bool,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .init();
    let args = Args::parse();
    let mut config = match &args.config {
        Some(path) => ServerConfig::load(path)?,
        None => ServerConfig::default(),
    }
    .with_env()?;
    config.orchestrator.realtime |= args.realtime;
    tracing::info!(
        nodes = config.inventory.nodes.len(),
        listen = %config.listen,
        "starting"
    );
    let handle = serve(config).await?;
    tokio::signal::ctrl_c().await?;
    handle.shutdown().await
}
