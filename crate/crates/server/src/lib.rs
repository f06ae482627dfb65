//! HTTP/JSON front end for image-to-image search.
//!
//! The service only ever reads the repository. Each request works on the
//! snapshot current when it arrived; a concurrent crawl becomes visible to
//! the next request once its writes reach the store file.

mod error;

use std::collections::BTreeSet;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;
use tracing::info;

use histoseek_core::api::{
    fetch_image, DomainInfo, FetchError, FieldError, ImageSource, SearchHit, SearchRequest, SearchResponse,
};
use histoseek_core::imaging;
use histoseek_core::ontology::load_profiles_dir;
use histoseek_core::repository::read_thumb;
use histoseek_core::search::{execute_search, SearchError};
use histoseek_core::SnapshotReader;

pub use error::{ApiError, StartupError};

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 10 << 20;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub db_path: PathBuf,
    pub profiles_dir: Option<PathBuf>,
    pub static_ui_dir: Option<PathBuf>,
    pub max_upload_bytes: usize,
}

impl ServiceConfig {
    pub fn new(bind: SocketAddr, db_path: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            bind,
            db_path: db_path.into(),
            profiles_dir: None,
            static_ui_dir: None,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
        }
    }
}

pub struct AppState {
    reader: SnapshotReader,
    known_domains: BTreeSet<String>,
    http: reqwest::Client,
    max_upload_bytes: usize,
}

impl AppState {
    /// Checks the configured paths and loads profiles.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, StartupError> {
        if config.max_upload_bytes == 0 {
            return Err(StartupError::Config("max_upload_bytes must be positive".into()));
        }
        if !config.db_path.is_file() {
            return Err(StartupError::MissingPath(config.db_path.clone()));
        }
        for dir in config.profiles_dir.iter().chain(config.static_ui_dir.iter()) {
            if !dir.is_dir() {
                return Err(StartupError::MissingPath(dir.clone()));
            }
        }
        let known_domains = match &config.profiles_dir {
            Some(dir) => load_profiles_dir(dir)?.iter().map(|p| p.name().to_string()).collect(),
            None => BTreeSet::new(),
        };
        let http = reqwest::Client::builder()
            .user_agent(histoseek_core::crawler::DEFAULT_USER_AGENT)
            .timeout(Duration::from_secs(20))
            .build()
            .map_err(|e| StartupError::Config(e.to_string()))?;
        Ok(AppState {
            reader: SnapshotReader::open(&config.db_path)?,
            known_domains,
            http,
            max_upload_bytes: config.max_upload_bytes,
        })
    }
}

pub fn router(state: Arc<AppState>, static_ui_dir: Option<PathBuf>) -> Router {
    // base64 inflates uploads by 4/3; leave room for the rest of the body.
    let body_limit = state.max_upload_bytes / 3 * 4 + 64 * 1024;
    let api = Router::new()
        .route("/api/domains", get(domains))
        .route("/api/search", post(search))
        .route("/api/thumb/{id}", get(thumb))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state);
    match static_ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn run(
    listener: TcpListener,
    config: &ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), StartupError> {
    let state = Arc::new(AppState::from_config(config)?);
    let app = router(state, config.static_ui_dir.clone());
    info!(addr = %listener.local_addr().map_err(StartupError::Io)?, db = %config.db_path.display(), "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(StartupError::Io)
}

/// Binds `config.bind` and serves until Ctrl-C or SIGTERM.
pub async fn serve(config: ServiceConfig) -> Result<(), StartupError> {
    let listener = TcpListener::bind(config.bind).await.map_err(StartupError::Io)?;
    run(listener, &config, shutdown_signal()).await
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
    info!("shutting down");
}

async fn domains(State(state): State<Arc<AppState>>) -> Result<Json<Vec<DomainInfo>>, ApiError> {
    let snap = state.reader.current()?;
    Ok(Json(snap.all_bounds().into_iter().map(DomainInfo::from).collect()))
}

async fn search(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SearchRequest>, JsonRejection>,
) -> Result<Json<SearchResponse>, ApiError> {
    let Json(req) = body?;
    let query = req.query().map_err(ApiError::Invalid)?;
    let bytes = match req.image_source().map_err(ApiError::Invalid)? {
        ImageSource::Bytes(b) => b,
        ImageSource::Url(url) => fetch_query_image(&state, url).await?,
    };
    if bytes.len() > state.max_upload_bytes {
        return Err(ApiError::TooLarge(state.max_upload_bytes));
    }

    let snap = state.reader.current()?;
    let worker_state = state.clone();
    let results =
        tokio::task::spawn_blocking(move || execute_search(&query, &bytes, &snap, &worker_state.known_domains))
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))?
            .map_err(|e| match e {
                SearchError::Query(q) => ApiError::Invalid(FieldError::new("query", q)),
                SearchError::UnknownDomain(_) => ApiError::Invalid(FieldError::new("domain", e)),
                SearchError::Image(_) => ApiError::Invalid(FieldError::new("image", e)),
                SearchError::Store(s) => ApiError::Store(s),
            })?;
    Ok(Json(SearchResponse {
        results: results.iter().map(SearchHit::from).collect(),
    }))
}

async fn fetch_query_image(state: &AppState, url: url::Url) -> Result<Vec<u8>, ApiError> {
    fetch_image(&state.http, url, state.max_upload_bytes)
        .await
        .map_err(|e| match e {
            FetchError::TooLarge(n) => ApiError::TooLarge(n),
            other => ApiError::Invalid(FieldError::new(
                "image_url",
                format!("cannot fetch query image: {other}"),
            )),
        })
}

async fn thumb(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let snap = state.reader.current()?;
    let entry = snap.get(&id).ok_or(ApiError::NotFound)?;
    let bytes = read_thumb(state.reader.path(), entry).ok_or(ApiError::NotFound)?;
    let mime = imaging::mime_type(&bytes).unwrap_or("application/octet-stream");
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}
