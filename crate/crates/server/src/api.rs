//! Routes and JSON shapes of the board API.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use maestro_arena::board::{board_view, error_view, history_view, BoardQuery, BoardView, ErrorView};
use maestro_arena::config::PhaseConfig;
use maestro_arena::export::export_csv;
use maestro_arena::records::{ErrorRecord, EvaluationRecord, Payload, Submission, SubmissionId};
use maestro_arena::{Arena, ArenaError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::worker::Queue;

#[derive(Debug, Clone)]
pub struct AppState {
    pub arena: Arc<Arena>,
    pub queue: Queue,
}

/// An [`ArenaError`] rendered as `{"error": {"kind", "message", …}}`.
#[derive(Debug)]
pub struct ApiError(pub ArenaError);

impl From<ArenaError> for ApiError {
    fn from(e: ArenaError) -> Self {
        Self(e)
    }
}

pub fn status_for(e: &ArenaError) -> StatusCode {
    match e {
        ArenaError::NotFound(_) => StatusCode::NOT_FOUND,
        ArenaError::Input(_) | ArenaError::Config { .. } => StatusCode::BAD_REQUEST,
        ArenaError::DeadlinePassed { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "kind": self.0.kind(), "message": self.0.to_string() });
        if let ArenaError::DeadlinePassed { phase, deadline } = &self.0 {
            body["phase"] = json!(phase);
            body["deadline"] = json!(deadline.to_rfc3339());
        }
        (status_for(&self.0), Json(json!({ "error": body }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn input(message: String) -> ApiError {
    ApiError(ArenaError::Input(message))
}

/// Parses `sort, dir, search, submitter, metrics, limit, offset`. `metrics`
/// is a comma-separated list of column keys.
pub fn board_query(params: &HashMap<String, String>) -> ApiResult<BoardQuery> {
    let text = |k: &str| params.get(k).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
    let number = |k: &str| -> ApiResult<Option<usize>> {
        text(k).map(|v| v.parse::<usize>().map_err(|e| input(format!("{k}: {e}")))).transpose()
    };
    Ok(BoardQuery {
        sort: text("sort"),
        dir: text("dir").map(|d| d.parse()).transpose()?,
        search: text("search"),
        submitter: text("submitter"),
        metrics: params
            .get("metrics")
            .map(|m| m.split(',').map(str::trim).filter(|k| !k.is_empty()).map(String::from).collect()),
        limit: number("limit")?,
        offset: number("offset")?.unwrap_or(0),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSummary {
    #[serde(flatten)]
    pub phase: PhaseConfig,
    pub submissions: usize,
    pub evaluations: usize,
    pub errors: usize,
}

async fn phases(State(state): State<AppState>) -> Json<Vec<PhaseSummary>> {
    let snapshot = state.arena.snapshot();
    let rows = state
        .arena
        .config()
        .phases
        .iter()
        .map(|p| PhaseSummary {
            phase: p.clone(),
            submissions: snapshot.submissions.iter().filter(|s| s.phase == p.name).count(),
            evaluations: snapshot.evaluations_in(&p.name).count(),
            errors: snapshot.errors_in(&p.name).count(),
        })
        .collect();
    Json(rows)
}

async fn board(
    State(state): State<AppState>,
    Path(phase): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Json<BoardView>> {
    let query = board_query(&params)?;
    Ok(Json(board_view(state.arena.config(), &state.arena.snapshot(), &phase, &query)?))
}

async fn errors(
    State(state): State<AppState>,
    Path(phase): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Json<ErrorView>> {
    let query = board_query(&params)?;
    Ok(Json(error_view(state.arena.config(), &state.arena.snapshot(), &phase, &query)?))
}

async fn history(
    State(state): State<AppState>,
    Path((phase, submitter)): Path<(String, String)>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Json<BoardView>> {
    let query = board_query(&params)?;
    Ok(Json(history_view(state.arena.config(), &state.arena.snapshot(), &phase, &submitter, &query)?))
}

async fn csv(State(state): State<AppState>, Path(phase): Path<String>) -> ApiResult<Response> {
    let body = export_csv(state.arena.config(), &state.arena.snapshot(), &phase)?;
    let disposition = format!("attachment; filename=\"{phase}.csv\"");
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()), (header::CONTENT_DISPOSITION, disposition)], body)
        .into_response())
}

async fn config(State(state): State<AppState>) -> Json<Value> {
    Json(serde_json::from_str(&state.arena.config().to_json()).expect("config serializes to JSON"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmissionRequest {
    pub submitter_id: String,
    pub phase: String,
    pub payload: Payload,
}

async fn submit(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Submission>)> {
    let request: SubmissionRequest = serde_json::from_slice(&body).map_err(|e| input(format!("request body: {e}")))?;
    let arena = state.arena.clone();
    let submission = tokio::task::spawn_blocking(move || arena.submit(&request.submitter_id, &request.phase, request.payload))
        .await
        .map_err(|e| ApiError(ArenaError::Store(format!("submission task failed: {e}"))))??;
    state.queue.push(submission.id);
    Ok((StatusCode::CREATED, Json(submission)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Evaluated,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmissionStatus {
    pub submission: Submission,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

async fn submission(State(state): State<AppState>, Path(id): Path<SubmissionId>) -> ApiResult<Json<SubmissionStatus>> {
    let snapshot = state.arena.snapshot();
    let submission = snapshot.submission(id).cloned().ok_or_else(|| ApiError(ArenaError::NotFound(format!("unknown submission {id}"))))?;
    let evaluation = snapshot.evaluation_of(id).cloned();
    let error = snapshot.errors.iter().rev().find(|e| e.submission_id == id).cloned();
    let status = match (&evaluation, &error) {
        (Some(_), _) => Status::Evaluated,
        (None, Some(_)) => Status::Failed,
        (None, None) => Status::Pending,
    };
    Ok(Json(SubmissionStatus { submission, status, evaluation, error }))
}

async fn not_found() -> ApiError {
    ApiError(ArenaError::NotFound("no such route".into()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/phases", get(phases))
        .route("/api/boards/{phase}", get(board))
        .route("/api/boards/{phase}/errors", get(errors))
        .route("/api/boards/{phase}/history/{submitter_id}", get(history))
        .route("/api/boards/{phase}/csv", get(csv))
        .route("/api/submissions", post(submit))
        .route("/api/submissions/{id}", get(submission))
        .route("/api/config", get(config))
        .fallback(not_found)
        .with_state(state)
}
