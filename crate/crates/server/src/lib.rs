//! Annotation service: serves labeling sessions over HTTP and persists each
//! session as one JSON document in a directory.
//!
//! Writes to a session are serialized by its lock; reads run concurrently.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use slangtriage::annotation::{build_session, AnnotationSession, SamplingPolicy, SessionError, SessionSummary};
use slangtriage::corpus::ingest_path;
use slangtriage::{Label, PredictionSet};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("missing or wrong access token")]
    Unauthorized,
    #[error("{0}")]
    Internal(String),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::UnknownItem(_) => ApiError::NotFound(e.to_string()),
            SessionError::Io(_) | SessionError::Json(_) => ApiError::Internal(e.to_string()),
            _ => ApiError::BadRequest(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = Arc<RwLock<AnnotationSession>>;

/// Sessions on disk plus their in-memory copies.
pub struct Store {
    dir: PathBuf,
    sessions: RwLock<BTreeMap<String, Shared>>,
}

impl Store {
    /// Opens `dir`, creating it if needed, and loads every `*.json` session.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Store, SessionError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = BTreeMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let s = AnnotationSession::load(&path)?;
                sessions.insert(s.session_id.clone(), Arc::new(RwLock::new(s)));
            }
        }
        log::info!("loaded {} session(s) from {}", sessions.len(), dir.display());
        Ok(Store {
            dir,
            sessions: RwLock::new(sessions),
        })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id:?}")))
    }

    /// Stores a new session; an existing session with the same id is kept
    /// as is, labels included.
    pub fn insert(&self, session: AnnotationSession) -> Result<String, SessionError> {
        let id = session.session_id.clone();
        let mut sessions = self.sessions.write().unwrap();
        if !sessions.contains_key(&id) {
            session.save(&self.path(&id))?;
            sessions.insert(id.clone(), Arc::new(RwLock::new(session)));
        }
        Ok(id)
    }

    pub fn summaries(&self) -> Vec<SessionSummary> {
        self.sessions
            .read()
            .unwrap()
            .values()
            .map(|s| s.read().unwrap().summary())
            .collect()
    }

    /// Applies `f` under the session's write lock and persists the result.
    fn update<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut AnnotationSession) -> Result<T, SessionError>,
    ) -> Result<T, ApiError> {
        let shared = self.get(id)?;
        let mut session = shared.write().unwrap();
        let mut next = session.clone();
        let out = f(&mut next)?;
        next.save(&self.path(id))?;
        *session = next;
        Ok(out)
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub token: Option<String>,
}

impl AppState {
    pub fn new(store: Store, token: Option<String>) -> Self {
        AppState {
            store: Arc::new(store),
            token: token.filter(|t| !t.is_empty()),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub predictions_file: PathBuf,
    pub corpus_file: PathBuf,
    #[serde(default)]
    pub policy: SamplingPolicy,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub items: usize,
}

#[derive(Debug, Deserialize)]
pub struct AnnotatorQuery {
    pub annotator: String,
}

#[derive(Debug, Deserialize)]
pub struct PairQuery {
    pub a: String,
    pub b: String,
}

/// Next item for an annotator. Carries no prediction data.
#[derive(Debug, Serialize, Deserialize)]
pub struct ItemView {
    pub post_id: String,
    pub text: String,
    pub position: usize,
    pub labeled: usize,
    pub total: usize,
}

#[derive(Debug, Deserialize)]
pub struct LabelBody {
    pub post_id: String,
    pub annotator: String,
    pub label: String,
}

#[derive(Debug, Deserialize)]
pub struct SkipBody {
    pub post_id: String,
    pub annotator: String,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/labels", post(add_label))
        .route("/sessions/{id}/skips", post(add_skip))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/agreement", get(agreement))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

fn presented_token(headers: &HeaderMap) -> Option<&str> {
    let auth = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    auth.strip_prefix("Bearer ").map(str::trim)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    match &state.token {
        Some(token) if presented_token(request.headers()) != Some(token.as_str()) => {
            ApiError::Unauthorized.into_response()
        }
        _ => next.run(request).await,
    }
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionSummary>> {
    Json(state.store.summaries())
}

fn load_inputs(body: &CreateSession) -> Result<AnnotationSession, ApiError> {
    let file = std::fs::File::open(&body.predictions_file)
        .map_err(|e| ApiError::BadRequest(format!("{}: {e}", body.predictions_file.display())))?;
    let predictions = PredictionSet::read_jsonl(std::io::BufReader::new(file))
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let (corpus, _) = ingest_path(&body.corpus_file, None)
        .map_err(|e| ApiError::BadRequest(format!("{}: {e}", body.corpus_file.display())))?;
    Ok(build_session(&predictions, &corpus, &body.policy)?)
}

async fn create_session(
    State(state): State<AppState>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let session = tokio::task::spawn_blocking(move || load_inputs(&body))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let items = session.len();
    let session_id = state.store.insert(session)?;
    log::info!("session {session_id} ready with {items} items");
    Ok((StatusCode::CREATED, Json(Created { session_id, items })))
}

async fn session_summary(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionSummary>, ApiError> {
    let shared = state.store.get(&id)?;
    let summary = shared.read().unwrap().summary();
    Ok(Json(summary))
}

async fn next_item(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<AnnotatorQuery>,
) -> Result<Response, ApiError> {
    let shared = state.store.get(&id)?;
    let session = shared.read().unwrap();
    let Some(item) = session.next_pending(&q.annotator) else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let position = session
        .items()
        .iter()
        .position(|i| i.post_id == item.post_id)
        .unwrap_or_default();
    let view = ItemView {
        post_id: item.post_id.clone(),
        text: item.text.clone(),
        position,
        labeled: session.progress(&q.annotator).labeled,
        total: session.len(),
    };
    Ok(Json(view).into_response())
}

async fn add_label(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<LabelBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let label: Label = body
        .label
        .parse()
        .map_err(|e: slangtriage::label::UnknownLabel| ApiError::BadRequest(e.to_string()))?;
    if !label.is_semantic() {
        return Err(ApiError::BadRequest(format!("{label} is not an annotation label")));
    }
    state
        .store
        .update(&id, |s| s.record_label(&body.post_id, &body.annotator, label))?;
    Ok(Json(serde_json::json!({
        "post_id": body.post_id,
        "annotator": body.annotator,
        "label": label,
    })))
}

async fn add_skip(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<SkipBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    state.store.update(&id, |s| s.skip(&body.post_id, &body.annotator))?;
    Ok(Json(serde_json::json!({ "post_id": body.post_id, "annotator": body.annotator })))
}

async fn export(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<AnnotatorQuery>,
) -> Result<Response, ApiError> {
    let shared = state.store.get(&id)?;
    let gold = shared.read().unwrap().export_gold(&q.annotator);
    let mut buf = Vec::new();
    gold.write_csv(&mut buf).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response())
}

async fn agreement(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<PairQuery>,
) -> Result<Response, ApiError> {
    let shared = state.store.get(&id)?;
    let report = shared
        .read()
        .unwrap()
        .agreement(&q.a, &q.b)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(Json(report).into_response())
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: &str, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// Convenience for callers that only have a directory and a token.
pub fn state_for(dir: &Path, token: Option<String>) -> Result<AppState, SessionError> {
    Ok(AppState::new(Store::open(dir)?, token))
}
