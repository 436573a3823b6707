use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use querytrail_cli::http_api::{serve, ProviderConfig, ServeConfig};
use querytrail_core::llm_gateway::LiveConfig;
use querytrail_core::sql_executor::ExecLimits;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Provider {
    Scripted,
    Replay,
    Live,
}

/// Serve querytrail sessions over HTTP.
#[derive(Parser, Debug)]
#[command(name = "querytrail", version)]
struct Args {
    /// SQLite database sessions are opened against.
    #[arg(long)]
    db: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Directory for persisted sessions.
    #[arg(long, default_value = "sessions")]
    store_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Provider::Scripted)]
    provider: Provider,
    /// Transcript (one JSON object per line) for the scripted and replay providers.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Rows kept in each result preview.
    #[arg(long, default_value_t = 100)]
    max_rows: usize,
    /// Per-statement timeout in milliseconds.
    #[arg(long, default_value_t = 5000)]
    timeout_ms: u64,
    #[arg(long, env = "LLM_API_KEY", hide_env_values = true, hide = true)]
    llm_api_key: Option<String>,
    #[arg(long, env = "LLM_ENDPOINT", hide = true)]
    llm_endpoint: Option<String>,
    #[arg(long, env = "LLM_MODEL", hide = true)]
    llm_model: Option<String>,
}

fn config(args: Args) -> Result<ServeConfig, String> {
    let script = |kind: &str| args.script.clone().ok_or_else(|| format!("--provider {kind} requires --script"));
    let provider = match args.provider {
        Provider::Scripted => ProviderConfig::Scripted { script: script("scripted")? },
        Provider::Replay => ProviderConfig::Replay { script: script("replay")? },
        Provider::Live => {
            let missing: Vec<&str> = [
                ("LLM_API_KEY", &args.llm_api_key),
                ("LLM_ENDPOINT", &args.llm_endpoint),
                ("LLM_MODEL", &args.llm_model),
            ]
            .iter()
            .filter(|(_, v)| v.as_deref().is_none_or(str::is_empty))
            .map(|(k, _)| *k)
            .collect();
            if !missing.is_empty() {
                return Err(format!("--provider live requires {}", missing.join(", ")));
            }
            ProviderConfig::Live(LiveConfig::new(
                args.llm_endpoint.clone().unwrap_or_default(),
                args.llm_model.clone().unwrap_or_default(),
                args.llm_api_key.clone().unwrap_or_default(),
            ))
        }
    };
    let limits = ExecLimits::new(args.max_rows, Duration::from_millis(args.timeout_ms))
        .ok_or("--max-rows and --timeout-ms must be positive")?;
    let mut config = ServeConfig::new(args.db, args.store_dir, provider);
    config.host = args.host;
    config.port = args.port;
    config.limits = limits;
    Ok(config)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let config = match config(Args::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match serve(config, shutdown_signal()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
