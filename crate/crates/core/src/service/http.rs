//! JSON API consumed by the browser client.
//!
//! * `POST /api/session` `{"corpus_id"}` → `{"session_id"}`
//! * `POST /api/session/{id}/message` `{"text", "k"?}` → `{"answer", "retrieved", "model_id"}`
//! * `GET /api/corpora` → `[{"corpus_id", "chunk_count", "embedder_id"}]`
//! * `GET /api/health` → `{"status": "ok", "model_backend": "up" | "down"}`
//! * `GET /` serves the UI bundle when a directory is configured.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use super::{CorpusInfo, ServiceError, Tutor};

#[derive(Debug, Deserialize)]
pub struct CreateSessionRequest {
    pub corpus_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
}

#[derive(Debug, Deserialize)]
pub struct MessageRequest {
    pub text: String,
    pub k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RetrievedView {
    pub chunk_id: String,
    pub score: f64,
    pub text: String,
    pub document_id: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MessageResponse {
    pub answer: String,
    pub retrieved: Vec<RetrievedView>,
    pub model_id: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HealthResponse {
    pub status: String,
    pub model_backend: String,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::UnknownCorpus(_) | ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::EmptyMessage | ServiceError::InvalidK | ServiceError::Store(_) => {
                StatusCode::BAD_REQUEST
            }
            e if e.is_backend() => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = serde_json::json!({ "error": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type Shared = State<Arc<Tutor>>;

pub fn router(tutor: Arc<Tutor>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/message", post(message))
        .route("/api/corpora", get(corpora))
        .route("/api/health", get(health))
        .with_state(tutor);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api,
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Persistence(format!("worker panicked: {e}"))))?
        .map_err(ApiError)
}

async fn create_session(
    State(tutor): Shared,
    Json(req): Json<CreateSessionRequest>,
) -> Result<Json<CreateSessionResponse>, ApiError> {
    let session_id = blocking(move || tutor.create_session(&req.corpus_id)).await?;
    Ok(Json(CreateSessionResponse { session_id }))
}

async fn message(
    State(tutor): Shared,
    Path(id): Path<String>,
    Json(req): Json<MessageRequest>,
) -> Result<Json<MessageResponse>, ApiError> {
    let t = tutor.clone();
    let turn = blocking(move || t.answer_query(&id, &req.text, req.k)).await?;
    Ok(Json(MessageResponse {
        answer: turn.text,
        retrieved: turn
            .retrieved
            .into_iter()
            .map(|r| RetrievedView {
                chunk_id: r.chunk_id,
                score: r.score,
                text: r.text,
                document_id: r.document_id,
            })
            .collect(),
        model_id: tutor.model_id().to_string(),
    }))
}

async fn corpora(State(tutor): Shared) -> Json<Vec<CorpusInfo>> {
    Json(tutor.corpora())
}

async fn health(State(tutor): Shared) -> Json<HealthResponse> {
    let up = tokio::task::spawn_blocking(move || tutor.backend_available())
        .await
        .unwrap_or(false);
    Json(HealthResponse {
        status: "ok".into(),
        model_backend: if up { "up" } else { "down" }.into(),
    })
}
