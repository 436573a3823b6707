use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::{json, Value};

use querytrail_core::session_engine::SessionError;

/// Error body returned by every endpoint: `{"error": {status, code, message, details}}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    pub details: Option<Value>,
}

/// Every code the API can return, with its status.
pub const ERROR_CODES: &[(&str, u16)] = &[
    // request shape
    ("bad_request", 400),
    ("route_not_found", 404),
    ("method_not_allowed", 405),
    ("internal", 500),
    // schema catalog
    ("database_not_found", 404),
    ("not_a_database", 422),
    ("introspection_failed", 500),
    ("unknown_table", 422),
    ("unknown_column", 422),
    ("empty_selection", 422),
    ("duplicate_table", 422),
    ("duplicate_column", 422),
    // intent linking
    ("empty_question", 422),
    ("unknown_mention", 404),
    ("unknown_field", 422),
    ("empty_fields", 422),
    ("not_confirmed", 409),
    // plans
    ("invalid_plan", 502),
    ("unknown_step", 404),
    ("incomplete_regeneration", 502),
    ("empty_edit", 422),
    // model gateway
    ("llm_provider_error", 502),
    ("llm_no_script_entry", 502),
    ("llm_malformed_output", 502),
    ("llm_invalid_request", 500),
    ("llm_io_error", 502),
    ("llm_corrupt_transcript", 502),
    // sessions
    ("invalid_state", 409),
    ("nothing_to_refine", 409),
    ("session_not_found", 404),
    ("corrupt_session", 500),
    ("io_error", 500),
    ("invalid_event", 500),
];

pub fn status_for(code: &str) -> StatusCode {
    ERROR_CODES
        .iter()
        .find(|(c, _)| *c == code)
        .and_then(|(_, s)| StatusCode::from_u16(*s).ok())
        .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> ApiError {
        ApiError { status: status_for(code).as_u16(), code: code.to_string(), message: message.into(), details: None }
    }

    pub fn with_details(mut self, details: Value) -> ApiError {
        self.details = Some(details);
        self
    }

    pub fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new("bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> ApiError {
        ApiError::new("internal", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> ApiError {
        let err = ApiError::new(e.code(), e.to_string());
        match &e {
            SessionError::InvalidState { action, state } => {
                err.with_details(json!({ "action": action, "state": state }))
            }
            SessionError::NothingToRefine(step) => err.with_details(json!({ "step_id": step })),
            SessionError::NotFound(id) => err.with_details(json!({ "session_id": id })),
            _ => err,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "error": self }))).into_response()
    }
}
