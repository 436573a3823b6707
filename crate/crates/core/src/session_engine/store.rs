use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::intent_linker::{LinkWarning, LinkingResult};
use crate::plan_graph::Plan;
use crate::schema_catalog::{SchemaSnapshot, SchemaSubset, SubsetSpec};
use crate::sql_attribution::AnnotatedSql;

use super::{replay, Event, Session, SessionError, SessionState};

pub const SCHEMA_VERSION: u64 = 1;

/// On-disk form of a session: the snapshot fields plus the schema it was
/// built against and the full event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub schema_version: u64,
    pub id: String,
    pub db_path: PathBuf,
    pub schema: SchemaSnapshot,
    pub selected: SubsetSpec,
    pub knowledge: String,
    pub question: String,
    pub state: SessionState,
    pub linking: Option<LinkingResult>,
    pub link_warnings: Vec<LinkWarning>,
    pub focused: Option<SubsetSpec>,
    pub plan: Option<Plan>,
    pub annotated: Option<AnnotatedSql>,
    pub events: Vec<Event>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl SessionDocument {
    pub fn from_session(s: &Session) -> SessionDocument {
        SessionDocument {
            schema_version: SCHEMA_VERSION,
            id: s.id.clone(),
            db_path: s.db_path.clone(),
            schema: (*s.schema).clone(),
            selected: s.selected.spec(),
            knowledge: s.knowledge.clone(),
            question: s.question.clone(),
            state: s.state,
            linking: s.linking.clone(),
            link_warnings: s.link_warnings.clone(),
            focused: s.focused.as_ref().map(SchemaSubset::spec),
            plan: s.plan.clone(),
            annotated: s.annotated.clone(),
            events: s.events.clone(),
            created_at: s.created_at,
            updated_at: s.updated_at,
        }
    }

    /// Rebuilds the session and checks that its event log reproduces it.
    pub fn into_session(self) -> Result<Session, SessionError> {
        let corrupt = |m: String| SessionError::CorruptSession(m);
        let schema = Arc::new(self.schema);
        schema.validate().map_err(|e| corrupt(e.to_string()))?;
        let subset = |spec: SubsetSpec| SchemaSubset::new(Arc::clone(&schema), spec).map_err(|e| corrupt(e.to_string()));
        let session = Session {
            id: self.id,
            db_path: self.db_path,
            selected: subset(self.selected)?,
            knowledge: self.knowledge,
            question: self.question,
            state: self.state,
            linking: self.linking,
            link_warnings: self.link_warnings,
            focused: self.focused.map(subset).transpose()?,
            plan: self.plan,
            annotated: self.annotated,
            events: self.events,
            created_at: self.created_at,
            updated_at: self.updated_at,
            schema: Arc::clone(&schema),
        };
        session.check_invariants().map_err(corrupt)?;
        let rebuilt = replay(&session.id, schema, &session.events).map_err(|e| corrupt(e.to_string()))?;
        if rebuilt != session {
            return Err(corrupt("event log does not reproduce the stored session".into()));
        }
        Ok(session)
    }
}

/// Directory of `<id>.json` session documents.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

fn io(e: std::io::Error) -> SessionError {
    SessionError::Io(e.to_string())
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<SessionStore, SessionError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io)?;
        Ok(SessionStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Ids are restricted so they can never escape the store directory.
    fn path(&self, id: &str) -> Result<PathBuf, SessionError> {
        let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok {
            return Err(SessionError::NotFound(id.to_string()));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    pub fn save(&self, session: &Session) -> Result<(), SessionError> {
        let path = self.path(&session.id)?;
        let doc = SessionDocument::from_session(session);
        let text = serde_json::to_string_pretty(&doc).map_err(|e| SessionError::Io(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    pub fn load(&self, id: &str) -> Result<Session, SessionError> {
        let path = self.path(id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(SessionError::NotFound(id.to_string())),
            Err(e) => return Err(io(e)),
        };
        parse_document(&text)
    }

    pub fn list(&self) -> Result<Vec<String>, SessionError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io)? {
            let name = entry.map_err(io)?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

pub fn parse_document(text: &str) -> Result<Session, SessionError> {
    let corrupt = |m: String| SessionError::CorruptSession(m);
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(format!("invalid JSON: {e}")))?;
    match value.get("schema_version") {
        None => return Err(corrupt("missing schema_version".into())),
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(corrupt(format!("unsupported schema_version {v}"))),
    }
    let doc: SessionDocument = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    doc.into_session()
}
