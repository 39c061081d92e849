//! HTTP routes over a [`SessionManager`].
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/session` | `{"user_id"}` | `{"session_id", "mup"}` |
//! | GET | `/session/{id}` | | `{"session_id", "mup"}` |
//! | POST | `/session/{id}/query` | `{"query"}` | answer, kind, scores, sql, timings, llm_calls, trace |
//! | GET | `/session/{id}/trace/{n}` | | the full query trace |
//! | DELETE | `/session/{id}` | | `{"dropped_staged"}` |
//! | GET | `/health` | | `{"status": "ok", "sessions"}` |
//!
//! Access, no-data and irrelevant outcomes are ordinary 200 replies with
//! `kind` set. Failures reply `{"error", "message"}`.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use tablerag_core::answer::AnswerKind;
use tablerag_core::auth::{AuthError, MinimalUserProfile};
use tablerag_core::pipeline::{BudgetReport, PipelineError, QueryTrace, SessionManager, Stage};
use tablerag_core::scorer::ScoreVector;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            error,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::UnknownSession(_) => Self::new(StatusCode::NOT_FOUND, "unknown_session", message),
            PipelineError::UnknownTrace { .. } => Self::new(StatusCode::NOT_FOUND, "unknown_trace", message),
            PipelineError::EmptyQuery => Self::new(StatusCode::BAD_REQUEST, "empty_query", message),
            PipelineError::Auth(AuthError::UnknownUser(_)) => {
                Self::new(StatusCode::UNAUTHORIZED, "unknown_user", message)
            }
            PipelineError::Auth(AuthError::EmptyCatalog) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "empty_catalog", message)
            }
            PipelineError::Gateway(_) => Self::new(StatusCode::BAD_GATEWAY, "provider_unavailable", message),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "pipeline_error", message),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub user_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub mup: MinimalUserProfile,
}

#[derive(Debug, Clone, Deserialize)]
pub struct QueryRequest {
    pub query: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryReply {
    pub query_no: u32,
    pub answer: String,
    pub kind: AnswerKind,
    pub scores: Option<ScoreVector>,
    pub sql: Option<String>,
    /// Stage durations in microseconds.
    pub timings: BTreeMap<Stage, u64>,
    pub llm_calls: usize,
    pub budget: BudgetReport,
    pub trace: QueryTrace,
}

impl From<QueryTrace> for QueryReply {
    fn from(trace: QueryTrace) -> Self {
        Self {
            query_no: trace.query_no,
            answer: trace.answer.text.clone(),
            kind: trace.answer.kind,
            scores: trace.scores.clone(),
            sql: trace.plan.as_ref().map(|p| p.sql()),
            timings: trace
                .stage_timings
                .iter()
                .map(|(s, t)| (*s, t.duration.as_micros() as u64))
                .collect(),
            llm_calls: trace.llm_calls,
            budget: trace.budget,
            trace,
        }
    }
}

type Shared = Arc<SessionManager>;

/// Runs blocking pipeline work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, PipelineError> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "task_failed",
            e.to_string(),
        )),
    }
}

async fn create_session(
    State(m): State<Shared>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let (session_id, mup) = blocking(move || m.create_session(&body.user_id)).await?;
    tracing::info!(session = %session_id, user = %mup.user_id, tables = mup.granted_tables.len(), "session created");
    Ok((StatusCode::CREATED, Json(SessionInfo { session_id, mup })))
}

async fn session_info(State(m): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    let mup = m.mup(&id)?;
    Ok(Json(SessionInfo { session_id: id, mup }))
}

async fn query(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<QueryRequest>,
) -> Result<Json<QueryReply>, ApiError> {
    let session = id.clone();
    let trace = blocking(move || m.query(&session, &body.query)).await?;
    tracing::info!(
        session = %id,
        query_no = trace.query_no,
        kind = ?trace.answer.kind,
        llm_calls = trace.llm_calls,
        total_ms = trace.budget.total.as_millis() as u64,
        "query answered"
    );
    Ok(Json(QueryReply::from(trace)))
}

async fn trace(State(m): State<Shared>, Path((id, n)): Path<(String, usize)>) -> Result<Json<QueryTrace>, ApiError> {
    Ok(Json(m.trace(&id, n)?))
}

async fn delete_session(State(m): State<Shared>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let dropped = m.delete_session(&id)?;
    Ok(Json(serde_json::json!({ "dropped_staged": dropped })))
}

async fn health(State(m): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "sessions": m.session_count() }))
}

pub fn router(sessions: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", post(create_session))
        .route("/session/{id}", get(session_info).delete(delete_session))
        .route("/session/{id}/query", post(query))
        .route("/session/{id}/trace/{n}", get(trace))
        .with_state(sessions)
}
