//! Read-only HTTP API over a loaded index.
//!
//! `GET /search`, `GET /relation/{id}` and `GET /health`. The index is
//! installed once into a [`ServiceState`]; until then every route answers
//! 503 so clients can poll `/health` across startup.

mod request;

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use mechkb_core::embed::{EmbedError, EmbeddingProvider};
use mechkb_core::index::{search_threshold, IndexError, ManifestCounts};
use mechkb_core::schema::{RelationClass, RelationId, ScoredResult};
use mechkb_core::{Index, Real};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use tower_http::cors::{Any, CorsLayer};

pub use request::{SearchRequest, MAX_K, MAX_OFFSET};

pub type SharedProvider = Arc<dyn EmbeddingProvider<Real>>;

/// Error rendered as `{"error": {"code", "message", "field"?}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub field: Option<&'static str>,
}

impl ApiError {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_parameter",
            message: message.into(),
            field: Some(field),
        }
    }

    pub fn missing(field: &'static str) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "missing_parameter",
            message: format!("`{field}` is required"),
            field: Some(field),
        }
    }

    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    fn loading() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "index_not_loaded", "index is still loading")
    }

    pub fn field(&self) -> Option<&'static str> {
        self.field
    }
}

impl From<IndexError> for ApiError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Query(q) => Self::invalid(q.field(), q.to_string()),
            IndexError::Embed(EmbedError::ProviderUnavailable(m)) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable", m)
            }
            IndexError::Embed(EmbedError::ProviderProtocolError(m)) => {
                Self::new(StatusCode::BAD_GATEWAY, "provider_error", m)
            }
            other => {
                tracing::error!(error = %other, "search failed");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string())
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(field) = self.field {
            error["field"] = json!(field);
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("an index is already installed")]
    AlreadyLoaded,
    #[error(transparent)]
    Index(#[from] IndexError),
}

struct Loaded {
    index: Index,
    provider: SharedProvider,
}

/// Shared state: empty until [`ServiceState::install`] succeeds, immutable
/// afterwards. Reads never take a lock.
#[derive(Default)]
pub struct ServiceState {
    loaded: OnceLock<Arc<Loaded>>,
}

impl ServiceState {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Install the index. Fails if the provider does not match the one the
    /// index was built with.
    pub fn install(&self, index: Index, provider: SharedProvider) -> Result<(), ServiceError> {
        index.check_provider(provider.as_ref())?;
        self.loaded
            .set(Arc::new(Loaded { index, provider }))
            .map_err(|_| ServiceError::AlreadyLoaded)
    }

    pub fn is_ready(&self) -> bool {
        self.loaded.get().is_some()
    }

    fn get(&self) -> Result<Arc<Loaded>, ApiError> {
        self.loaded.get().cloned().ok_or_else(ApiError::loading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub score: Real,
    pub relation_id: RelationId,
    pub arg1: String,
    pub arg2: String,
    pub class: RelationClass,
    pub confidence: f64,
    pub sentence: String,
    pub title: String,
    pub url: String,
    pub doc_id: String,
    pub sentence_index: u32,
    pub reversed: bool,
}

impl From<ScoredResult<Real>> for ResultRow {
    fn from(r: ScoredResult<Real>) -> Self {
        let rel = r.relation;
        Self {
            score: r.score,
            relation_id: rel.relation_id,
            arg1: rel.arg1.raw,
            arg2: rel.arg2.raw,
            class: rel.class,
            confidence: rel.confidence,
            sentence: rel.provenance.sentence,
            title: rel.provenance.title,
            url: rel.provenance.url,
            doc_id: rel.provenance.doc_id,
            sentence_index: rel.provenance.sentence_index,
            reversed: r.reversed,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SearchResponse {
    pub results: Vec<ResultRow>,
    pub k: usize,
    pub offset: usize,
    pub took_ms: u64,
    /// Entity-stream entries the retrieval examined.
    pub total_scanned: usize,
}

#[derive(Debug, Serialize)]
struct Health<'a> {
    status: &'static str,
    provider: &'a str,
    dim: usize,
    format_version: u32,
    build_timestamp: u64,
    counts: &'a ManifestCounts,
}

async fn health(State(state): State<Arc<ServiceState>>) -> Result<Response, ApiError> {
    let loaded = state.get()?;
    let m = loaded.index.manifest();
    Ok(Json(Health {
        status: "ok",
        provider: &m.provider,
        dim: m.dim,
        format_version: m.format_version,
        build_timestamp: m.build_timestamp,
        counts: &m.counts,
    })
    .into_response())
}

async fn relation(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let loaded = state.get()?;
    let id: RelationId = id
        .parse()
        .map_err(|_| ApiError::invalid("id", format!("`{id}` is not a 1-16 digit hex relation id")))?;
    match loaded.index.get(id) {
        Some(rel) => Ok(Json(rel).into_response()),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no relation with id {id}"),
        )),
    }
}

async fn search(
    State(state): State<Arc<ServiceState>>,
    query: Result<Query<Vec<(String, String)>>, QueryRejection>,
) -> Result<Json<SearchResponse>, ApiError> {
    let loaded = state.get()?;
    let Query(pairs) = query.map_err(|e| ApiError::invalid("query", e.body_text()))?;
    let req = SearchRequest::from_pairs(&pairs)?;
    let started = Instant::now();
    let query = req.to_query();
    let output = tokio::task::spawn_blocking(move || {
        search_threshold(&query, &loaded.index, loaded.provider.as_ref())
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let took_ms = started.elapsed().as_millis() as u64;

    let results = output
        .results
        .into_iter()
        .skip(req.offset)
        .map(ResultRow::from)
        .collect();
    Ok(Json(SearchResponse {
        results,
        k: req.k,
        offset: req.offset,
        took_ms,
        total_scanned: output.stats.entries_examined,
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

/// Build the router. CORS admits any origin: the API is read-only and
/// carries no credentials, so the UI can be hosted anywhere.
pub fn app(state: Arc<ServiceState>) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods([Method::GET]);
    Router::new()
        .route("/search", get(search))
        .route("/relation/{id}", get(relation))
        .route("/health", get(health))
        .fallback(not_found)
        .layer(cors)
        .with_state(state)
}

/// Serve `state` on `listener` until `shutdown` resolves.
pub async fn serve<F>(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
    shutdown: F,
) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, app(state))
        .with_graceful_shutdown(shutdown)
        .await
}
