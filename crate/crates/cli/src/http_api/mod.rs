//! JSON-over-HTTP surface for sessions.
//!
//! Session endpoints answer with `{"session": ..., "action_result": ...}`;
//! failures answer with `{"error": {status, code, message, details}}`.

mod error;
mod serialize;
mod server;

pub use error::{status_for, ApiError, ERROR_CODES};
pub use serialize::{envelope, serialize_session};
pub use server::{app_state, serve, ProviderConfig, ServeConfig, ServeError, Server};

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use querytrail_core::intent_linker::FieldRef;
use querytrail_core::plan_graph::DependencyTree;
use querytrail_core::schema_catalog::{filter_keyword, relationship_edges};
use querytrail_core::session_engine::{ActionResult, Session, SessionError, SessionManager, StepAction};

pub struct AppState {
    pub manager: SessionManager,
    /// Database every new session is opened against.
    pub db: PathBuf,
}

type Shared = State<Arc<AppState>>;
type ApiResult = Result<Json<Value>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/question", post(submit_question))
        .route("/sessions/{id}/mappings/{mention_id}", post(correct_mapping))
        .route("/sessions/{id}/confirm", post(confirm))
        .route("/sessions/{id}/steps/{step_id}/execute", post(execute_step))
        .route("/sessions/{id}/steps/{step_id}/refine", post(refine_step))
        .route("/sessions/{id}/steps/{step_id}/edit", post(edit_step))
        .route("/sessions/{id}/steps/{step_id}/regenerate", post(regenerate_step))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/reopen", post(reopen))
        .route("/sessions/{id}/schema", get(schema))
        .route("/sessions/{id}/tree", get(tree))
        .fallback(|| async { ApiError::new("route_not_found", "no such endpoint") })
        .method_not_allowed_fallback(|| async { ApiError::new("method_not_allowed", "method not allowed") })
        .with_state(state)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

/// Runs a session operation on the blocking pool and wraps the outcome.
async fn run<F>(state: Arc<AppState>, op: F) -> ApiResult
where
    F: FnOnce(&SessionManager) -> Result<(Arc<Session>, Option<ActionResult>), SessionError> + Send + 'static,
{
    let (session, result) = tokio::task::spawn_blocking(move || op(&state.manager))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(envelope(&session, result.as_ref())))
}

fn acted(
    out: Result<(Arc<Session>, ActionResult), SessionError>,
) -> Result<(Arc<Session>, Option<ActionResult>), SessionError> {
    out.map(|(s, r)| (s, Some(r)))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct CreateBody {
    tables: Vec<String>,
    #[serde(default)]
    knowledge: String,
}

async fn create_session(State(state): Shared, payload: Result<Json<CreateBody>, JsonRejection>) -> ApiResult {
    let b = body(payload)?;
    let db = state.db.clone();
    run(state, move |m| Ok((m.create(&db, &b.tables, &b.knowledge)?, Some(ActionResult::Created)))).await
}

async fn get_session(State(state): Shared, Path(id): Path<String>) -> ApiResult {
    run(state, move |m| Ok((m.get(&id)?, None))).await
}

#[derive(Deserialize)]
struct QuestionBody {
    question: String,
}

async fn submit_question(
    State(state): Shared,
    Path(id): Path<String>,
    payload: Result<Json<QuestionBody>, JsonRejection>,
) -> ApiResult {
    let b = body(payload)?;
    run(state, move |m| acted(m.submit_question(&id, &b.question))).await
}

#[derive(Deserialize)]
struct MappingBody {
    fields: Vec<FieldRef>,
}

async fn correct_mapping(
    State(state): Shared,
    Path((id, mention_id)): Path<(String, String)>,
    payload: Result<Json<MappingBody>, JsonRejection>,
) -> ApiResult {
    let b = body(payload)?;
    run(state, move |m| acted(m.correct_mapping(&id, &mention_id, &b.fields))).await
}

async fn confirm(State(state): Shared, Path(id): Path<String>) -> ApiResult {
    run(state, move |m| acted(m.confirm_intent(&id))).await
}

async fn step(state: Arc<AppState>, id: String, step_id: String, action: StepAction) -> ApiResult {
    run(state, move |m| acted(m.step_action(&id, &step_id, &action))).await
}

async fn execute_step(State(state): Shared, Path((id, step_id)): Path<(String, String)>) -> ApiResult {
    step(state, id, step_id, StepAction::Execute).await
}

async fn refine_step(State(state): Shared, Path((id, step_id)): Path<(String, String)>) -> ApiResult {
    step(state, id, step_id, StepAction::Refine).await
}

async fn regenerate_step(State(state): Shared, Path((id, step_id)): Path<(String, String)>) -> ApiResult {
    step(state, id, step_id, StepAction::Regenerate).await
}

#[derive(Deserialize)]
struct EditBody {
    #[serde(default)]
    explanation: Option<String>,
    #[serde(default)]
    sql: Option<String>,
}

async fn edit_step(
    State(state): Shared,
    Path((id, step_id)): Path<(String, String)>,
    payload: Result<Json<EditBody>, JsonRejection>,
) -> ApiResult {
    let b = body(payload)?;
    step(state, id, step_id, StepAction::Edit { explanation: b.explanation, sql: b.sql }).await
}

async fn finalize(State(state): Shared, Path(id): Path<String>) -> ApiResult {
    run(state, move |m| acted(m.finalize(&id))).await
}

async fn reopen(State(state): Shared, Path(id): Path<String>) -> ApiResult {
    run(state, move |m| acted(m.reopen(&id))).await
}

async fn read_session(state: &Arc<AppState>, id: String) -> Result<Arc<Session>, ApiError> {
    let state = Arc::clone(state);
    Ok(tokio::task::spawn_blocking(move || state.manager.get(&id))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??)
}

#[derive(Deserialize)]
struct SchemaQuery {
    filter: Option<String>,
}

/// Full schema of the session's database, the selection, the focused
/// subset and the foreign-key edges. `?filter=` narrows `tables` to names
/// containing the keyword.
async fn schema(State(state): Shared, Path(id): Path<String>, Query(q): Query<SchemaQuery>) -> ApiResult {
    let s = read_session(&state, id).await?;
    let tables = match q.filter.as_deref().map(str::trim).filter(|f| !f.is_empty()) {
        Some(keyword) => filter_keyword(&s.schema, keyword)
            .into_iter()
            .map(|(table, columns)| json!({ "name": table, "columns": columns }))
            .collect::<Vec<_>>(),
        None => s.schema.tables.iter().map(|t| serde_json::to_value(t).expect("table serializes")).collect(),
    };
    Ok(Json(json!({
        "database": s.schema.database_label,
        "captured_at": s.schema.captured_at,
        "tables": tables,
        "relationships": relationship_edges(&s.schema),
        "selected": s.selected.spec(),
        "focused": s.focused.as_ref().map(|f| f.spec()),
    })))
}

/// Dependency tree of the current plan; empty before a plan exists.
async fn tree(State(state): Shared, Path(id): Path<String>) -> ApiResult {
    let s = read_session(&state, id).await?;
    let tree = s
        .plan
        .as_ref()
        .map(DependencyTree::from_plan)
        .unwrap_or(DependencyTree { nodes: Vec::new(), roots: Vec::new() });
    Ok(Json(json!({ "version": s.plan.as_ref().map(|p| p.version()), "tree": tree })))
}
