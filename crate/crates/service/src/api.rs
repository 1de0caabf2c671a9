//! JSON-over-HTTP facade. Every response body is JSON; failures carry
//! `{code, message}`.

use std::collections::HashSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ecbw_core::session_engine::{EngineError, EngineStatus, Phase, Session, SessionEngine, Submission, IDEAS_PER_SESSION};
use ecbw_core::{IdeaId, SelectionStrategy};
use log::{info, warn};
use serde::{Deserialize, Serialize};

pub struct AppState {
    pub engine: Arc<SessionEngine>,
    pub topic: String,
    pub instructions: String,
    pub allowlist: Option<HashSet<u32>>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/login", post(login))
        .route("/api/submit", post(submit))
        .route("/api/status", get(status))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<StatusView>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into(), status: None } }
    }

    fn from_engine(err: EngineError, engine: &SessionEngine) -> Self {
        let message = err.to_string();
        match err {
            EngineError::InvalidParticipant => Self::new(StatusCode::BAD_REQUEST, "invalid_participant", message),
            EngineError::Terminated { .. } => {
                let mut e = Self::new(StatusCode::CONFLICT, "terminated", message);
                e.body.status = Some(engine.status().into());
                e
            }
            EngineError::UnknownSession => Self::new(StatusCode::NOT_FOUND, "unknown_session", message),
            EngineError::Expired => Self::new(StatusCode::NOT_FOUND, "session_expired", message),
            EngineError::Abandoned => Self::new(StatusCode::NOT_FOUND, "session_abandoned", message),
            EngineError::AlreadyCommitted => Self::new(StatusCode::CONFLICT, "already_committed", message),
            EngineError::InvalidSubmission(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_submission", message),
            EngineError::Selection(_) | EngineError::Store(_) => {
                warn!("internal failure: {message}");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Parse a JSON body, answering malformed input with `status`.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes, status: StatusCode) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(status, "malformed_request", e.to_string()))
}

#[derive(Debug, Deserialize)]
struct LoginRequest {
    participant_no: i64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CellView {
    pub idea_id: IdeaId,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ColumnView {
    pub family_no: u32,
    pub cells: Vec<CellView>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionView {
    pub session_id: String,
    pub phase: Phase,
    pub topic: String,
    pub instructions: String,
    /// Empty in the initial phase.
    pub grid: Vec<ColumnView>,
    pub entry_slots: usize,
}

impl SessionView {
    fn new(session: &Session, state: &AppState) -> Self {
        let snapshot = state.engine.snapshot();
        let grid = session
            .grid
            .iter()
            .flat_map(|g| &g.columns)
            .map(|col| ColumnView {
                family_no: col.family_no,
                cells: col
                    .cells
                    .iter()
                    .map(|&id| CellView {
                        idea_id: id,
                        text: snapshot.get(id).map(|r| r.text.clone()).unwrap_or_default(),
                    })
                    .collect(),
            })
            .collect();
        Self {
            session_id: session.id.to_string(),
            phase: session.phase,
            topic: state.topic.clone(),
            instructions: state.instructions.clone(),
            grid,
            entry_slots: IDEAS_PER_SESSION,
        }
    }
}

async fn login(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<SessionView>, ApiError> {
    let req: LoginRequest = parse_body(&body, StatusCode::BAD_REQUEST)?;
    let participant = u32::try_from(req.participant_no)
        .ok()
        .filter(|&p| p > 0)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "invalid_participant", "participant numbers must be positive"))?;
    if let Some(allowed) = &state.allowlist {
        if !allowed.contains(&participant) {
            return Err(ApiError::new(StatusCode::FORBIDDEN, "not_allowed", format!("participant {participant} is not on the list")));
        }
    }
    let session = state.engine.login(participant).map_err(|e| ApiError::from_engine(e, &state.engine))?;
    info!("participant {participant} logged in ({:?})", session.phase);
    Ok(Json(SessionView::new(&session, &state)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub session_id: String,
    #[serde(default)]
    pub votes: Vec<(usize, usize)>,
    #[serde(default)]
    pub ideas: Vec<(usize, String)>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SubmitResponse {
    pub n: usize,
    pub terminated: bool,
}

async fn submit(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<SubmitResponse>, ApiError> {
    let req: SubmitRequest = parse_body(&body, StatusCode::UNPROCESSABLE_ENTITY)?;
    let submission = Submission { voted_cells: req.votes, new_ideas: req.ideas };
    let engine = state.engine.clone();
    let id = req.session_id.into();
    // commits fsync the event log
    let receipt = tokio::task::spawn_blocking(move || engine.commit(&id, &submission).map_err(|e| ApiError::from_engine(e, &engine)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(SubmitResponse { n: receipt.idea_count, terminated: receipt.terminated }))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct StatusView {
    pub n: usize,
    #[serde(rename = "N")]
    pub target: u32,
    #[serde(rename = "N_f")]
    pub family_count: u32,
    pub terminated: bool,
    pub strategy: SelectionStrategy,
}

impl From<EngineStatus> for StatusView {
    fn from(s: EngineStatus) -> Self {
        Self {
            n: s.idea_count,
            target: s.target_idea_count,
            family_count: s.family_count,
            terminated: s.terminated,
            strategy: s.strategy,
        }
    }
}

async fn status(State(state): State<Arc<AppState>>) -> Json<StatusView> {
    Json(state.engine.status().into())
}
