use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use tracing_subscriber::EnvFilter;

use statechat_core::Registry;
use statechat_service::{router, AppState, ServiceConfig};

/// Serve conversation instances over HTTP.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// TOML config file; STATECHAT_* environment variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let config = ServiceConfig::load(args.config.as_deref()).context("loading config")?;

    // Built before the runtime starts: the HTTP backend owns a blocking client.
    let backend = config.build_backend().context("building LM backend")?;
    let store = config.open_store().context("opening store")?;
    let state = AppState::new(store, backend, Arc::new(Registry::with_builtins()))
        .with_unique_names(config.unique_names);
    let app = router(Arc::new(state));

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.bind)
            .await
            .with_context(|| format!("binding {}", config.bind))?;
        tracing::info!(addr = %listener.local_addr()?, store = %config.store, backend = ?config.backend, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })
}
