use std::path::Path;
use std::sync::Arc;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::intent_linker::{self, FieldRef, LinkWarning};
use crate::llm_gateway::LlmProvider;
use crate::plan_graph::{self, PlanContext, StepOutcome, StepStatus};
use crate::schema_catalog::{introspect_database, select_tables, SchemaSubset};
use crate::sql_attribution::annotate;
use crate::sql_executor::{ExecLimits, SqlExecutor};

use super::{apply, Event, EventBody, FailureRecord, Session, SessionError, SessionState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum StepAction {
    Execute,
    Refine,
    Edit {
        #[serde(default)]
        explanation: Option<String>,
        #[serde(default)]
        sql: Option<String>,
    },
    Regenerate,
}

impl StepAction {
    pub fn name(&self) -> &'static str {
        match self {
            StepAction::Execute => "execute",
            StepAction::Refine => "refine",
            StepAction::Edit { .. } => "edit",
            StepAction::Regenerate => "regenerate",
        }
    }
}

/// What an operation did, alongside the updated session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionResult {
    Created,
    Linked { warnings: Vec<LinkWarning> },
    MappingCorrected { mention_id: String },
    PlanGenerated { version: u64, steps: usize },
    Executed { step_id: String, outcome: StepOutcome },
    Edited { step_id: String, stale: Vec<String> },
    Refined { step_id: String, sql: String },
    Regenerated { from_step: String, replaced: Vec<String> },
    Finalized { forced: bool, composed: bool },
    Reopened,
}

/// A failed operation. When the failure itself was recorded as an event,
/// `session` carries the session with that event appended and must be
/// committed like a success.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub error: SessionError,
    pub session: Option<Box<Session>>,
}

impl From<SessionError> for Failure {
    fn from(error: SessionError) -> Self {
        Failure { error, session: None }
    }
}

pub type Outcome = Result<(Session, ActionResult), Failure>;

fn commit(session: &mut Session, body: EventBody) -> Result<(), SessionError> {
    let at = Utc::now().max(session.updated_at);
    let event = Event { seq: session.events.len() as u64 + 1, at, body };
    apply(session, &event)
}

fn guard(session: &Session, action: &str, allowed: &[SessionState]) -> Result<(), SessionError> {
    if allowed.contains(&session.state) {
        Ok(())
    } else {
        Err(SessionError::InvalidState { action: action.to_string(), state: session.state })
    }
}

/// Records `error` as an `action_failed` event on a copy of `session`.
fn recorded(session: &Session, action: &str, step_id: Option<&str>, error: SessionError) -> Failure {
    let mut next = session.clone();
    let record = FailureRecord {
        action: action.to_string(),
        step_id: step_id.map(str::to_string),
        code: error.code().to_string(),
        message: error.to_string(),
    };
    match commit(&mut next, EventBody::ActionFailed(record)) {
        Ok(()) => Failure { error, session: Some(Box::new(next)) },
        Err(e) => Failure { error: e, session: None },
    }
}

fn focused_of(session: &Session) -> Result<&SchemaSubset, SessionError> {
    session.focused.as_ref().ok_or(SessionError::Link(intent_linker::LinkError::NotConfirmed))
}

/// Runs session operations. Holds the model provider and execution limits;
/// sessions themselves are plain values passed in and returned.
pub struct SessionEngine {
    provider: Arc<dyn LlmProvider>,
    limits: ExecLimits,
}

impl SessionEngine {
    pub fn new(provider: Arc<dyn LlmProvider>, limits: ExecLimits) -> SessionEngine {
        SessionEngine { provider, limits }
    }

    pub fn provider(&self) -> &Arc<dyn LlmProvider> {
        &self.provider
    }

    pub fn limits(&self) -> ExecLimits {
        self.limits
    }

    pub fn create_session(
        &self,
        db_path: &Path,
        table_names: &[impl AsRef<str>],
        knowledge: &str,
    ) -> Result<Session, SessionError> {
        let schema = Arc::new(introspect_database(db_path)?);
        let selected = select_tables(&schema, table_names)?;
        let mut session = Session::blank(uuid::Uuid::new_v4().to_string(), schema, Utc::now());
        commit(
            &mut session,
            EventBody::SessionCreated {
                db_path: db_path.to_path_buf(),
                selected: selected.spec(),
                knowledge: knowledge.to_string(),
            },
        )?;
        Ok(session)
    }

    /// Links a new or edited question. Any earlier linking and plan are
    /// discarded first.
    pub fn submit_question(&self, session: &Session, question: &str) -> Outcome {
        const ACTION: &str = "submit_question";
        guard(session, ACTION, &[SessionState::QuestionEntry, SessionState::IntentReview])?;
        if question.trim().is_empty() {
            return Err(SessionError::Link(intent_linker::LinkError::EmptyQuestion).into());
        }
        let mut next = session.clone();
        commit(&mut next, EventBody::QuestionSubmitted { question: question.to_string() })?;
        match intent_linker::link(self.provider.as_ref(), question, &next.selected, &next.knowledge) {
            Ok(out) => {
                let warnings = out.warnings.clone();
                commit(&mut next, EventBody::Linked { linking: out.result, warnings: out.warnings })?;
                Ok((next, ActionResult::Linked { warnings }))
            }
            Err(e) => Err(recorded(&next, ACTION, None, e.into())),
        }
    }

    pub fn correct_mapping(&self, session: &Session, mention_id: &str, fields: &[FieldRef]) -> Outcome {
        guard(session, "correct_mapping", &[SessionState::IntentReview])?;
        let linking = session.linking.as_ref().expect("linking present in IntentReview");
        let corrected = intent_linker::apply_correction(linking, mention_id, fields, &session.selected)
            .map_err(SessionError::from)?;
        let mut next = session.clone();
        commit(
            &mut next,
            EventBody::MappingCorrected {
                mention_id: mention_id.to_string(),
                fields: fields.to_vec(),
                linking: corrected,
            },
        )?;
        Ok((next, ActionResult::MappingCorrected { mention_id: mention_id.to_string() }))
    }

    /// Confirms the linking, derives the focused schema and decomposes the
    /// question. On failure only an `action_failed` event is added.
    pub fn confirm_intent(&self, session: &Session) -> Outcome {
        const ACTION: &str = "confirm_intent";
        guard(session, ACTION, &[SessionState::IntentReview])?;
        let linking = session.linking.as_ref().expect("linking present in IntentReview");
        let confirmed = intent_linker::confirm(linking);
        let focused = intent_linker::derive_focused_schema(&confirmed, &session.selected)
            .map_err(SessionError::from)?;
        let ctx = PlanContext { question: &session.question, focused: &focused, knowledge: &session.knowledge };
        let plan = match plan_graph::decompose(self.provider.as_ref(), ctx) {
            Ok(p) => p,
            Err(e) => return Err(recorded(session, ACTION, None, e.into())),
        };
        let mut next = session.clone();
        commit(&mut next, EventBody::IntentConfirmed { focused: focused.spec() })?;
        let result = ActionResult::PlanGenerated { version: plan.version(), steps: plan.steps().len() };
        commit(&mut next, EventBody::PlanGenerated { plan })?;
        Ok((next, result))
    }

    pub fn step_action(&self, session: &Session, step_id: &str, action: &StepAction) -> Outcome {
        let name = action.name();
        guard(session, name, &[SessionState::PlanReview])?;
        let body = self
            .step_event(session, step_id, action)
            .map_err(|e| recorded(session, name, Some(step_id), e))?;
        let result = match &body {
            EventBody::StepExecuted { outcome, .. } => {
                ActionResult::Executed { step_id: step_id.to_string(), outcome: outcome.clone() }
            }
            EventBody::StepEdited { plan, .. } => ActionResult::Edited {
                step_id: step_id.to_string(),
                stale: plan
                    .steps()
                    .iter()
                    .filter(|s| s.status == StepStatus::Stale)
                    .map(|s| s.id.clone())
                    .collect(),
            },
            EventBody::StepRefined { sql, .. } => {
                ActionResult::Refined { step_id: step_id.to_string(), sql: sql.clone() }
            }
            EventBody::Regenerated { replaced, .. } => {
                ActionResult::Regenerated { from_step: step_id.to_string(), replaced: replaced.clone() }
            }
            _ => unreachable!("step actions only produce step events"),
        };
        let mut next = session.clone();
        commit(&mut next, body)?;
        Ok((next, result))
    }

    fn step_event(&self, session: &Session, step_id: &str, action: &StepAction) -> Result<EventBody, SessionError> {
        let plan = session.plan.as_ref().expect("plan present in PlanReview");
        let step = plan
            .step(step_id)
            .ok_or_else(|| plan_graph::PlanError::UnknownStep(step_id.to_string()))?;
        let focused = focused_of(session)?;
        let body = match action {
            StepAction::Execute => {
                let executor = SqlExecutor::new(&session.db_path, self.limits);
                let outcome = match executor.execute_preview(&step.sql) {
                    Ok(p) => StepOutcome::Preview(p),
                    Err(e) => StepOutcome::Error(e),
                };
                EventBody::StepExecuted { step_id: step_id.to_string(), outcome }
            }
            StepAction::Refine => {
                let Some(StepOutcome::Error(error)) = &step.last_result else {
                    return Err(SessionError::NothingToRefine(step_id.to_string()));
                };
                let (sql, plan) = plan_graph::refine_step(self.provider.as_ref(), plan, step_id, error, focused)?;
                EventBody::StepRefined { step_id: step_id.to_string(), sql, plan }
            }
            StepAction::Edit { explanation, sql } => {
                let plan = plan.edit_step(step_id, explanation.as_deref(), sql.as_deref())?;
                EventBody::StepEdited {
                    step_id: step_id.to_string(),
                    explanation: explanation.clone(),
                    sql: sql.clone(),
                    plan,
                }
            }
            StepAction::Regenerate => {
                let ctx = PlanContext { question: &session.question, focused, knowledge: &session.knowledge };
                let (replaced, plan) =
                    match plan_graph::regenerate_downstream(self.provider.as_ref(), plan, step_id, ctx)? {
                        Some((drafts, plan)) => (drafts.iter().map(|d| d.id.trim().to_string()).collect(), plan),
                        None => (Vec::new(), plan.bumped()),
                    };
                EventBody::Regenerated { from_step: step_id.to_string(), replaced, plan }
            }
        };
        Ok(body)
    }

    /// Produces the final SQL and its annotation. Allowed with unexecuted or
    /// failed steps, in which case the result is flagged as forced.
    pub fn finalize(&self, session: &Session) -> Outcome {
        const ACTION: &str = "finalize";
        guard(session, ACTION, &[SessionState::PlanReview])?;
        let plan = session.plan.as_ref().expect("plan present in PlanReview");
        let focused = focused_of(session)?;
        let ctx = PlanContext { question: &session.question, focused, knowledge: &session.knowledge };
        let final_sql = match plan_graph::finalize(self.provider.as_ref(), plan, ctx) {
            Ok(f) => f,
            Err(e) => return Err(recorded(session, ACTION, None, e.into())),
        };
        let annotated = annotate(&final_sql.sql, plan);
        let result = ActionResult::Finalized { forced: final_sql.forced, composed: final_sql.composed };
        let mut next = session.clone();
        commit(&mut next, EventBody::Finalized { forced: final_sql.forced, final_sql, annotated })?;
        Ok((next, result))
    }

    pub fn reopen(&self, session: &Session) -> Outcome {
        guard(session, "reopen", &[SessionState::Finalized])?;
        let version = session.plan.as_ref().map_or(0, |p| p.version());
        let mut next = session.clone();
        commit(&mut next, EventBody::Reopened { version })?;
        Ok((next, ActionResult::Reopened))
    }
}
