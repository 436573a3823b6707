use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use querytrail_core::llm_gateway::{read_transcript, LiveConfig, LiveProvider, LlmProvider, ReplayProvider, ScriptedProvider};
use querytrail_core::session_engine::{SessionEngine, SessionManager, SessionStore};
use querytrail_core::sql_executor::ExecLimits;

use super::{router, AppState};

#[derive(Debug, Clone)]
pub enum ProviderConfig {
    Scripted { script: PathBuf },
    Replay { script: PathBuf },
    Live(LiveConfig),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub db: PathBuf,
    pub host: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    pub store_dir: PathBuf,
    pub provider: ProviderConfig,
    pub limits: ExecLimits,
}

impl ServeConfig {
    pub fn new(db: impl Into<PathBuf>, store_dir: impl Into<PathBuf>, provider: ProviderConfig) -> ServeConfig {
        ServeConfig {
            db: db.into(),
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            store_dir: store_dir.into(),
            provider,
            limits: ExecLimits::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

fn build_provider(config: &ProviderConfig) -> Result<Arc<dyn LlmProvider>, ServeError> {
    let read = |path: &PathBuf| {
        read_transcript(path).map_err(|e| ServeError::Config(format!("script {}: {e}", path.display())))
    };
    Ok(match config {
        ProviderConfig::Scripted { script } => Arc::new(ScriptedProvider::from_entries(read(script)?)),
        ProviderConfig::Replay { script } => Arc::new(ReplayProvider::from_entries(read(script)?)),
        ProviderConfig::Live(live) => {
            if live.api_key.is_empty() || live.endpoint.is_empty() || live.model.is_empty() {
                return Err(ServeError::Config("live provider needs an endpoint, a model and an API key".into()));
            }
            Arc::new(LiveProvider::new(live.clone()))
        }
    })
}

/// Validates the configuration and builds the shared state.
pub fn app_state(config: &ServeConfig) -> Result<AppState, ServeError> {
    if !config.db.is_file() {
        return Err(ServeError::Config(format!("database {} does not exist", config.db.display())));
    }
    let provider = build_provider(&config.provider)?;
    let store = SessionStore::open(&config.store_dir).map_err(|e| ServeError::Config(e.to_string()))?;
    let manager = SessionManager::new(SessionEngine::new(provider, config.limits), store);
    Ok(AppState { manager, db: config.db.clone() })
}

/// A bound, not yet serving, HTTP server.
pub struct Server {
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
}

impl Server {
    pub async fn bind(config: &ServeConfig) -> Result<Server, ServeError> {
        let state = Arc::new(app_state(config)?);
        let addr = SocketAddr::new(config.host, config.port);
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| ServeError::Bind { addr, source })?;
        Ok(Server { listener, state })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Serves until `shutdown` resolves, then finishes in-flight requests.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
        tracing::info!(addr = %self.local_addr(), "listening");
        axum::serve(self.listener, router(self.state)).with_graceful_shutdown(shutdown).await?;
        Ok(())
    }
}

/// Binds and serves in one call.
pub async fn serve(config: ServeConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
    Server::bind(&config).await?.run(shutdown).await
}
