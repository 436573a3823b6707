//! Sessions: one per querying task, moving through table selection,
//! intent review, plan review and finalization.
//!
//! Every change is an [`Event`]. Operations compute the event (calling the
//! model or the database where needed) and the pure [`apply`] folds it into
//! the session, so replaying a stored log through the same function
//! rebuilds the session exactly.

mod engine;
mod manager;
mod store;

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent_linker::{FieldRef, LinkError, LinkWarning, LinkingResult};
use crate::llm_gateway::LlmError;
use crate::plan_graph::{FinalSql, Plan, PlanError, StepOutcome};
use crate::schema_catalog::{SchemaError, SchemaSnapshot, SchemaSubset, SubsetSpec};
use crate::sql_attribution::AnnotatedSql;

pub use engine::{ActionResult, Failure, SessionEngine, StepAction};
pub use manager::SessionManager;
pub use store::{parse_document, SessionDocument, SessionStore, SCHEMA_VERSION};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{action} is not allowed in state {state}")]
    InvalidState { action: String, state: SessionState },
    #[error("step {0} has no execution error to refine")]
    NothingToRefine(String),
    #[error("session not found: {0}")]
    NotFound(String),
    #[error("corrupt session: {0}")]
    CorruptSession(String),
    #[error("session i/o error: {0}")]
    Io(String),
    #[error("event {seq} cannot be applied: {reason}")]
    InvalidEvent { seq: u64, reason: String },
}

impl SessionError {
    /// Stable machine-readable code, one per error kind.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Schema(e) => match e {
                SchemaError::FileNotFound(_) => "database_not_found",
                SchemaError::NotADatabase(_) => "not_a_database",
                SchemaError::IntrospectionFailed(_) => "introspection_failed",
                SchemaError::UnknownTable(_) => "unknown_table",
                SchemaError::UnknownColumn { .. } => "unknown_column",
                SchemaError::EmptySelection => "empty_selection",
                SchemaError::DuplicateTable(_) => "duplicate_table",
                SchemaError::DuplicateColumn { .. } => "duplicate_column",
            },
            SessionError::Link(e) => match e {
                LinkError::Llm(e) => llm_code(e),
                LinkError::EmptyQuestion => "empty_question",
                LinkError::EmptySubset => "empty_selection",
                LinkError::UnknownMention(_) => "unknown_mention",
                LinkError::UnknownField { .. } => "unknown_field",
                LinkError::EmptyFields => "empty_fields",
                LinkError::NotConfirmed => "not_confirmed",
            },
            SessionError::Plan(e) => match e {
                PlanError::Llm(e) => llm_code(e),
                PlanError::InvalidPlan(_) => "invalid_plan",
                PlanError::UnknownStep(_) => "unknown_step",
                PlanError::IncompleteRegeneration { .. } => "incomplete_regeneration",
                PlanError::EmptyEdit => "empty_edit",
            },
            SessionError::InvalidState { .. } => "invalid_state",
            SessionError::NothingToRefine(_) => "nothing_to_refine",
            SessionError::NotFound(_) => "session_not_found",
            SessionError::CorruptSession(_) => "corrupt_session",
            SessionError::Io(_) => "io_error",
            SessionError::InvalidEvent { .. } => "invalid_event",
        }
    }
}

fn llm_code(e: &LlmError) -> &'static str {
    match e {
        LlmError::ProviderError(_) => "llm_provider_error",
        LlmError::NoScriptEntry { .. } => "llm_no_script_entry",
        LlmError::MalformedOutput(_) => "llm_malformed_output",
        LlmError::InvalidRequest(_) => "llm_invalid_request",
        LlmError::IoError(_) => "llm_io_error",
        LlmError::CorruptTranscript { .. } => "llm_corrupt_transcript",
    }
}

/// Stages in order; a later stage compares greater.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionState {
    TableSelection,
    QuestionEntry,
    IntentReview,
    PlanReview,
    Finalized,
}

impl std::fmt::Display for SessionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub action: String,
    pub step_id: Option<String>,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    SessionCreated { db_path: PathBuf, selected: SubsetSpec, knowledge: String },
    QuestionSubmitted { question: String },
    Linked { linking: LinkingResult, warnings: Vec<LinkWarning> },
    MappingCorrected { mention_id: String, fields: Vec<FieldRef>, linking: LinkingResult },
    IntentConfirmed { focused: SubsetSpec },
    PlanGenerated { plan: Plan },
    StepExecuted { step_id: String, outcome: StepOutcome },
    StepEdited {
        step_id: String,
        explanation: Option<String>,
        sql: Option<String>,
        plan: Plan,
    },
    StepRefined { step_id: String, sql: String, plan: Plan },
    Regenerated { from_step: String, replaced: Vec<String>, plan: Plan },
    Finalized { final_sql: FinalSql, forced: bool, annotated: AnnotatedSql },
    Reopened { version: u64 },
    ActionFailed(FailureRecord),
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::SessionCreated { .. } => "session_created",
            EventBody::QuestionSubmitted { .. } => "question_submitted",
            EventBody::Linked { .. } => "linked",
            EventBody::MappingCorrected { .. } => "mapping_corrected",
            EventBody::IntentConfirmed { .. } => "intent_confirmed",
            EventBody::PlanGenerated { .. } => "plan_generated",
            EventBody::StepExecuted { .. } => "step_executed",
            EventBody::StepEdited { .. } => "step_edited",
            EventBody::StepRefined { .. } => "step_refined",
            EventBody::Regenerated { .. } => "regenerated",
            EventBody::Finalized { .. } => "finalized",
            EventBody::Reopened { .. } => "reopened",
            EventBody::ActionFailed(_) => "action_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    pub db_path: PathBuf,
    pub schema: Arc<SchemaSnapshot>,
    pub selected: SchemaSubset,
    pub knowledge: String,
    pub question: String,
    pub state: SessionState,
    pub linking: Option<LinkingResult>,
    pub link_warnings: Vec<LinkWarning>,
    pub focused: Option<SchemaSubset>,
    pub plan: Option<Plan>,
    pub annotated: Option<AnnotatedSql>,
    pub events: Vec<Event>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl Session {
    /// A session before its creation event: no tables, no question.
    pub fn blank(id: impl Into<String>, schema: Arc<SchemaSnapshot>, at: DateTime<Utc>) -> Session {
        let selected = SchemaSubset::new(Arc::clone(&schema), Vec::new()).expect("empty subset is valid");
        Session {
            id: id.into(),
            db_path: PathBuf::new(),
            schema,
            selected,
            knowledge: String::new(),
            question: String::new(),
            state: SessionState::TableSelection,
            linking: None,
            link_warnings: Vec::new(),
            focused: None,
            plan: None,
            annotated: None,
            events: Vec::new(),
            created_at: at,
            updated_at: at,
        }
    }

    pub fn plan(&self) -> Option<&Plan> {
        self.plan.as_ref()
    }

    pub fn last_event(&self) -> Option<&Event> {
        self.events.last()
    }

    /// Checks the state-dependent presence rules and event numbering.
    pub fn check_invariants(&self) -> Result<(), String> {
        let s = self.state;
        if self.linking.is_some() != (s >= SessionState::IntentReview) {
            return Err(format!("linking presence does not match state {s}"));
        }
        if self.plan.is_some() != (s >= SessionState::PlanReview) {
            return Err(format!("plan presence does not match state {s}"));
        }
        let confirmed = self.linking.as_ref().is_some_and(|l| l.confirmed);
        if self.focused.is_some() != confirmed {
            return Err("focused schema presence does not match confirmation".into());
        }
        if self.annotated.is_some() != (s == SessionState::Finalized) {
            return Err("annotated SQL presence does not match state".into());
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.seq != i as u64 + 1 {
                return Err(format!("event {} has seq {}", i + 1, e.seq));
            }
        }
        Ok(())
    }
}

fn require(session: &Session, seq: u64, kind: &str, allowed: &[SessionState]) -> Result<(), SessionError> {
    if allowed.contains(&session.state) {
        Ok(())
    } else {
        Err(SessionError::InvalidEvent {
            seq,
            reason: format!("{kind} in state {}", session.state),
        })
    }
}

fn plan_mut(session: &mut Session, seq: u64) -> Result<&mut Plan, SessionError> {
    session
        .plan
        .as_mut()
        .ok_or_else(|| SessionError::InvalidEvent { seq, reason: "no plan".into() })
}

/// Folds one event into `session`. The only place session fields change.
pub fn apply(session: &mut Session, event: &Event) -> Result<(), SessionError> {
    use SessionState::*;
    let seq = event.seq;
    if seq != session.events.len() as u64 + 1 {
        return Err(SessionError::InvalidEvent { seq, reason: format!("expected seq {}", session.events.len() + 1) });
    }
    let bad = |reason: String| SessionError::InvalidEvent { seq, reason };
    let kind = event.body.kind();
    match &event.body {
        EventBody::SessionCreated { db_path, selected, knowledge } => {
            require(session, seq, kind, &[TableSelection])?;
            session.selected = SchemaSubset::new(Arc::clone(&session.schema), selected.clone())
                .map_err(|e| bad(e.to_string()))?;
            session.db_path = db_path.clone();
            session.knowledge = knowledge.clone();
            session.created_at = event.at;
            session.state = QuestionEntry;
        }
        EventBody::QuestionSubmitted { question } => {
            require(session, seq, kind, &[QuestionEntry, IntentReview])?;
            session.question = question.clone();
            session.linking = None;
            session.link_warnings.clear();
            session.focused = None;
            session.plan = None;
            session.state = QuestionEntry;
        }
        EventBody::Linked { linking, warnings } => {
            require(session, seq, kind, &[QuestionEntry])?;
            session.linking = Some(linking.clone());
            session.link_warnings = warnings.clone();
            session.state = IntentReview;
        }
        EventBody::MappingCorrected { linking, .. } => {
            require(session, seq, kind, &[IntentReview])?;
            session.linking = Some(linking.clone());
            session.focused = None;
        }
        EventBody::IntentConfirmed { focused } => {
            require(session, seq, kind, &[IntentReview])?;
            let linking = session.linking.as_mut().ok_or_else(|| bad("no linking".into()))?;
            linking.confirmed = true;
            session.focused = Some(
                SchemaSubset::new(Arc::clone(&session.schema), focused.clone())
                    .map_err(|e| bad(e.to_string()))?,
            );
        }
        EventBody::PlanGenerated { plan } => {
            require(session, seq, kind, &[IntentReview])?;
            if session.focused.is_none() {
                return Err(bad("plan generated before intent confirmation".into()));
            }
            session.plan = Some(plan.clone());
            session.state = PlanReview;
        }
        EventBody::StepExecuted { step_id, outcome } => {
            require(session, seq, kind, &[PlanReview])?;
            let plan = plan_mut(session, seq)?;
            *plan = plan.with_execution(step_id, outcome.clone()).map_err(|e| bad(e.to_string()))?;
        }
        EventBody::StepEdited { plan, .. }
        | EventBody::StepRefined { plan, .. }
        | EventBody::Regenerated { plan, .. } => {
            require(session, seq, kind, &[PlanReview])?;
            let current = plan_mut(session, seq)?;
            if plan.version() <= current.version() {
                return Err(bad(format!("plan version {} does not advance {}", plan.version(), current.version())));
            }
            *current = plan.clone();
        }
        EventBody::Finalized { final_sql, annotated, .. } => {
            require(session, seq, kind, &[PlanReview])?;
            let plan = plan_mut(session, seq)?;
            if final_sql.derived_from_version != plan.version() {
                return Err(bad("final SQL derived from another plan version".into()));
            }
            *plan = plan.with_final(final_sql.clone());
            session.annotated = Some(annotated.clone());
            session.state = Finalized;
        }
        EventBody::Reopened { .. } => {
            require(session, seq, kind, &[Finalized])?;
            let plan = plan_mut(session, seq)?;
            *plan = plan.without_final();
            session.annotated = None;
            session.state = PlanReview;
        }
        EventBody::ActionFailed(_) => {}
    }
    session.updated_at = event.at;
    session.events.push(event.clone());
    Ok(())
}

/// Rebuilds a session from its event log.
pub fn replay(id: &str, schema: Arc<SchemaSnapshot>, events: &[Event]) -> Result<Session, SessionError> {
    let first = events
        .first()
        .ok_or_else(|| SessionError::InvalidEvent { seq: 1, reason: "empty event log".into() })?;
    let mut session = Session::blank(id, schema, first.at);
    for e in events {
        apply(&mut session, e)?;
    }
    Ok(session)
}
