use serde_json::{json, Value};

use querytrail_core::plan_graph::DependencyTree;
use querytrail_core::session_engine::{ActionResult, Session};

/// Full JSON view of a session. Keys are emitted in a fixed order, so equal
/// sessions serialize to identical bytes.
///
/// Top-level fields: `id`, `state`, `database`, `question`, `knowledge`,
/// `selected`, `linking`, `link_warnings`, `focused`, `plan`, `tree`,
/// `final_sql`, `annotated_sql`, `events`, `created_at`, `updated_at`.
pub fn serialize_session(s: &Session) -> Value {
    let plan = s.plan.as_ref();
    json!({
        "id": s.id,
        "state": s.state,
        "database": s.schema.database_label,
        "question": s.question,
        "knowledge": s.knowledge,
        "selected": s.selected.spec(),
        "linking": s.linking,
        "link_warnings": s.link_warnings,
        "focused": s.focused.as_ref().map(|f| f.spec()),
        "plan": plan,
        "tree": plan.map(DependencyTree::from_plan),
        "final_sql": plan.and_then(|p| p.final_sql()),
        "annotated_sql": s.annotated,
        "events": s.events,
        "created_at": s.created_at,
        "updated_at": s.updated_at,
    })
}

/// Response body of every session endpoint.
pub fn envelope(s: &Session, result: Option<&ActionResult>) -> Value {
    json!({ "session": serialize_session(s), "action_result": result })
}
