//! HTTP steering service.
//!
//! The model snapshot is immutable after startup. A session is its query
//! embedding plus an edit list; every response is recomputed from those,
//! so the service keeps no state a library caller could not reproduce.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::{JsonRejection, PathRejection};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use saeir::interpret::{frequency_profile, top_activating_docs, Embedder, FeatureExplanation};
use saeir::retrieval::reconstruct_store;
use saeir::steering::{Edit, QuerySource, SessionView, SteeringModel, SteeringSession, DEFAULT_TOP_K};
use saeir::{EmbeddingStore, SaeParams, SparseLatent};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, Default, Serialize)]
pub struct ModelInfo {
    pub checkpoint: Option<String>,
    pub epoch: Option<usize>,
}

struct Entry {
    session: SteeringSession,
    last_used: Instant,
}

pub struct ServiceState {
    model: SteeringModel,
    corpus_ids: Vec<String>,
    corpus_latents: Vec<SparseLatent>,
    feature_counts: Vec<u64>,
    feature_ranks: Vec<Option<usize>>,
    explanations: HashMap<usize, FeatureExplanation>,
    queries: Option<EmbeddingStore>,
    embedder: Option<Arc<dyn Embedder>>,
    info: ModelInfo,
    idle_timeout: Duration,
    sessions: Mutex<HashMap<String, Entry>>,
}

impl ServiceState {
    /// Encodes and decodes `corpus` once; sessions retrieve against the result.
    pub fn new(params: SaeParams, corpus: &EmbeddingStore) -> saeir::Result<Self> {
        let (latents, recon) = reconstruct_store(&params, corpus)?;
        let profile = frequency_profile(&latents, None)?;
        Ok(ServiceState {
            model: SteeringModel {
                params,
                corpus: recon,
                summaries: HashMap::new(),
                texts: HashMap::new(),
                top_k: DEFAULT_TOP_K,
            },
            corpus_ids: corpus.ids().to_vec(),
            corpus_latents: latents,
            feature_ranks: profile.feature_ranks(),
            feature_counts: profile.feature_counts,
            explanations: HashMap::new(),
            queries: None,
            embedder: None,
            info: ModelInfo::default(),
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_queries(mut self, queries: EmbeddingStore) -> Self {
        self.queries = Some(queries);
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_texts(mut self, texts: HashMap<String, String>) -> Self {
        self.model.texts = texts;
        self
    }

    pub fn with_explanations(mut self, explanations: Vec<FeatureExplanation>) -> Self {
        self.model.summaries = explanations.iter().map(|e| (e.feature, e.summary.clone())).collect();
        self.explanations = explanations.into_iter().map(|e| (e.feature, e)).collect();
        self
    }

    pub fn with_info(mut self, info: ModelInfo) -> Self {
        self.info = info;
        self
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.model.top_k = top_k;
        self
    }

    pub fn with_idle_timeout(mut self, timeout: Duration) -> Self {
        self.idle_timeout = timeout;
        self
    }

    pub fn model(&self) -> &SteeringModel {
        &self.model
    }

    /// Drops sessions idle for longer than the timeout; returns how many.
    pub fn expire_idle(&self) -> usize {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().expect("session lock");
        let before = sessions.len();
        sessions.retain(|_, e| now.duration_since(e.last_used) <= self.idle_timeout);
        before - sessions.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }

    /// Runs `f` on the live session, refreshing its idle clock.
    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut SteeringSession) -> Result<T, ApiError>) -> Result<T, ApiError> {
        self.expire_idle();
        let mut sessions = self.sessions.lock().expect("session lock");
        let entry = sessions.get_mut(id).ok_or_else(|| ApiError::not_found("unknown_session", format!("no session {id}")))?;
        entry.last_used = Instant::now();
        f(&mut entry.session)
    }

    fn view(&self, session: &SteeringSession) -> Result<SessionView, ApiError> {
        self.model.view(session).map_err(ApiError::internal)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
}

impl ApiError {
    fn bad_request(error: &'static str, detail: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            error,
            detail: detail.into(),
        }
    }

    fn not_found(error: &'static str, detail: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            error,
            detail: detail.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            error: "internal",
            detail: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request("malformed_body", r.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::bad_request("malformed_path", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.error, "detail": self.detail }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub query_text: Option<String>,
    #[serde(default)]
    pub query_id: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerRequest {
    pub feature: usize,
    pub delta: f64,
}

#[derive(Debug, Serialize)]
pub struct DocumentActivation {
    pub doc_id: String,
    pub activation: f64,
    pub snippet: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct FeatureDetail {
    pub index: usize,
    pub explanation: Option<FeatureExplanation>,
    pub frequency_rank: Option<usize>,
    pub activation_count: u64,
    pub top_documents: Vec<DocumentActivation>,
}

type Shared = Arc<ServiceState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/steer", post(steer))
        .route("/sessions/{id}/steer/{edit_index}", delete(remove_edit))
        .route("/features/{index}", get(feature))
        .route("/healthz", get(healthz))
        .fallback(|| async { ApiError::not_found("not_found", "no such route") })
        .with_state(state)
}

async fn create_session(
    State(state): State<Shared>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let Json(req) = body?;
    let (source, query) = match (req.query_text, req.query_id) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(ApiError::bad_request("malformed_body", "give exactly one of query_text, query_id"));
        }
        (None, Some(id)) => {
            let queries = state
                .queries
                .as_ref()
                .ok_or_else(|| ApiError::bad_request("no_query_store", "service was started without a query store"))?;
            let row = queries.get(&id).ok_or_else(|| ApiError::not_found("unknown_query", format!("no query {id}")))?;
            let row = row.to_vec();
            (QuerySource::Id(id), row)
        }
        (Some(text), None) => {
            let embedder = state
                .embedder
                .clone()
                .ok_or_else(|| ApiError::bad_request("no_embedder", "service was started without an embedder"))?;
            let input = vec![text.clone()];
            let mut out = tokio::task::spawn_blocking(move || embedder.embed(&input))
                .await
                .map_err(ApiError::internal)?
                .map_err(|e| ApiError {
                    status: StatusCode::BAD_GATEWAY,
                    error: "embedder_failed",
                    detail: e.to_string(),
                })?;
            let row = out.pop().ok_or_else(|| ApiError::internal("embedder returned nothing"))?;
            if row.len() != state.model.params.input_dim() {
                return Err(ApiError::internal(format!(
                    "embedder dimension {} does not match model input {}",
                    row.len(),
                    state.model.params.input_dim()
                )));
            }
            (QuerySource::Text(text), row)
        }
    };
    let session = SteeringSession::new(uuid::Uuid::new_v4().to_string(), source, query);
    let view = state.view(&session)?;
    state.expire_idle();
    state.sessions.lock().expect("session lock").insert(
        session.id.clone(),
        Entry {
            session,
            last_used: Instant::now(),
        },
    );
    Ok(Json(view))
}

async fn steer(
    State(state): State<Shared>,
    path: Result<Path<String>, PathRejection>,
    body: Result<Json<SteerRequest>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let Path(id) = path?;
    let Json(edit) = body?;
    let latent_dim = state.model.params.latent_dim();
    let session = state.with_session(&id, |s| {
        if edit.feature >= latent_dim {
            return Err(ApiError::not_found("unknown_feature", format!("feature {} out of range 0..{latent_dim}", edit.feature)));
        }
        s.steer(&state.model.params, Edit {
            feature: edit.feature,
            delta: edit.delta,
        })
        .map_err(|e| ApiError::bad_request("invalid_edit", e.to_string()))?;
        Ok(s.clone())
    })?;
    Ok(Json(state.view(&session)?))
}

async fn remove_edit(
    State(state): State<Shared>,
    path: Result<Path<(String, usize)>, PathRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let Path((id, index)) = path?;
    let session = state.with_session(&id, |s| {
        s.remove_edit(index)
            .map_err(|_| ApiError::not_found("unknown_edit", format!("session has {} edits", s.edits.len())))?;
        Ok(s.clone())
    })?;
    Ok(Json(state.view(&session)?))
}

async fn feature(
    State(state): State<Shared>,
    path: Result<Path<usize>, PathRejection>,
) -> Result<Json<FeatureDetail>, ApiError> {
    let Path(index) = path?;
    if index >= state.model.params.latent_dim() {
        return Err(ApiError::not_found("unknown_feature", format!("feature {index} out of range")));
    }
    let top = top_activating_docs(index, &state.corpus_ids, &state.corpus_latents, Some(state.model.top_k))
        .map_err(ApiError::internal)?;
    Ok(Json(FeatureDetail {
        index,
        explanation: state.explanations.get(&index).cloned(),
        frequency_rank: state.feature_ranks[index],
        activation_count: state.feature_counts[index],
        top_documents: top
            .into_iter()
            .map(|(doc_id, activation)| DocumentActivation {
                snippet: state.model.texts.get(&doc_id).cloned(),
                doc_id,
                activation,
            })
            .collect(),
    }))
}

async fn healthz(State(state): State<Shared>) -> Json<serde_json::Value> {
    let p = &state.model.params;
    Json(json!({
        "status": "ok",
        "checkpoint": state.info.checkpoint,
        "epoch": state.info.epoch,
        "input_dim": p.input_dim(),
        "latent_dim": p.latent_dim(),
        "k": p.k(),
        "corpus_size": state.corpus_ids.len(),
        "query_store_size": state.queries.as_ref().map(EmbeddingStore::len),
        "query_text_enabled": state.embedder.is_some(),
        "explanations": state.explanations.len(),
        "sessions": state.session_count(),
        "top_k": state.model.top_k,
        "idle_timeout_secs": state.idle_timeout.as_secs(),
    }))
}

/// Serves until ctrl-c, sweeping idle sessions once a minute.
pub async fn serve(state: ServiceState, listen: &str) -> std::io::Result<()> {
    let state = Arc::new(state);
    let sweeper = {
        let state = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                let n = state.expire_idle();
                if n > 0 {
                    log::info!("expired {n} idle sessions");
                }
            }
        })
    };
    let listener = tokio::net::TcpListener::bind(listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    sweeper.abort();
    result
}
