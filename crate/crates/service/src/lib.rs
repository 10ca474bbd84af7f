//! HTTP front of the session manager.
//!
//! All bodies are JSON. Field names are documented in `openapi.json` next
//! to this crate's manifest; errors share one shape:
//! `{"error": kind, "message": text, "allowed": [letters]?}`.

use std::net::SocketAddr;
use std::sync::Arc;

use apr_core::service::{CreateSession, ServiceError, SessionManager};
use apr_core::store::TrajectoryRecord;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

/// Error payload for every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
}

pub struct HttpError(ServiceError);

impl From<ServiceError> for HttpError {
    fn from(e: ServiceError) -> Self {
        HttpError(e)
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        let message = self.0.to_string();
        let (status, kind, allowed) = match self.0 {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found", None),
            ServiceError::Rejected { allowed, .. } => (StatusCode::UNPROCESSABLE_ENTITY, "rejected", Some(allowed)),
            ServiceError::Protocol { .. } => (StatusCode::CONFLICT, "protocol", None),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request", None),
            ServiceError::Store(_) | ServiceError::Env(_) => {
                tracing::error!(%message, "internal error");
                (StatusCode::INTERNAL_SERVER_ERROR, "internal", None)
            }
        };
        (status, Json(ApiError { error: kind.into(), message, allowed })).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LetterBody {
    pub letter: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportBody {
    pub session_id: String,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
    pub config_digest: String,
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes, allow_empty: bool) -> Result<T, HttpError> {
    if allow_empty && body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| HttpError(ServiceError::BadRequest(e.to_string())))
}

fn parse_letter(body: &Bytes) -> Result<String, HttpError> {
    serde_json::from_slice::<LetterBody>(body)
        .map(|b| b.letter)
        .map_err(|e| HttpError(ServiceError::BadRequest(e.to_string())))
}

type Shared = Arc<SessionManager>;

async fn create(State(m): State<Shared>, body: Bytes) -> Result<Response, HttpError> {
    let req: CreateSession = parse_body(&body, true)?;
    let view = m.create_session(req)?;
    tracing::info!(session = %view.session_id, "session created");
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn round(State(m): State<Shared>, Path(id): Path<String>) -> Result<Response, HttpError> {
    Ok(Json(m.round(&id)?).into_response())
}

async fn choice(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Response, HttpError> {
    let letter = parse_letter(&body)?;
    Ok(Json(m.post_choice(&id, &letter)?).into_response())
}

async fn final_(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Response, HttpError> {
    let letter = parse_letter(&body)?;
    // the final appends to the trajectory file
    let result = tokio::task::spawn_blocking(move || m.post_final(&id, &letter))
        .await
        .expect("final handler panicked")?;
    Ok(Json(result).into_response())
}

async fn export(State(m): State<Shared>, Path(id): Path<String>) -> Result<Response, HttpError> {
    let records = m.export(&id)?;
    Ok(Json(ExportBody { session_id: id, records }).into_response())
}

async fn healthz(State(m): State<Shared>) -> Json<Health> {
    Json(Health { status: "ok".into(), sessions: m.len(), config_digest: m.config().digest() })
}

pub fn router(manager: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/round", get(round))
        .route("/sessions/{id}/choice", post(choice))
        .route("/sessions/{id}/final", post(final_))
        .route("/sessions/{id}/export", get(export))
        .route("/healthz", get(healthz))
        .with_state(manager)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, manager: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
