use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use crate::intent_linker::FieldRef;

use super::{ActionResult, Failure, Session, SessionEngine, SessionError, SessionStore, StepAction};

/// Per-session slot: `writer` serializes mutations, `current` is the last
/// committed snapshot that readers clone without waiting on the writer.
struct Slot {
    writer: Mutex<()>,
    current: RwLock<Arc<Session>>,
}

/// Live sessions backed by a [`SessionStore`]. Different sessions never
/// block each other; within one session there is a single writer and any
/// number of readers.
pub struct SessionManager {
    engine: SessionEngine,
    store: SessionStore,
    slots: Mutex<HashMap<String, Arc<Slot>>>,
}

impl SessionManager {
    pub fn new(engine: SessionEngine, store: SessionStore) -> SessionManager {
        SessionManager { engine, store, slots: Mutex::new(HashMap::new()) }
    }

    pub fn engine(&self) -> &SessionEngine {
        &self.engine
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    fn insert(&self, session: Session) -> Arc<Session> {
        let id = session.id.clone();
        let session = Arc::new(session);
        let slot = Slot { writer: Mutex::new(()), current: RwLock::new(Arc::clone(&session)) };
        self.slots.lock().unwrap().insert(id, Arc::new(slot));
        session
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, SessionError> {
        if let Some(slot) = self.slots.lock().unwrap().get(id) {
            return Ok(Arc::clone(slot));
        }
        let loaded = self.store.load(id)?;
        let mut slots = self.slots.lock().unwrap();
        let slot = slots.entry(id.to_string()).or_insert_with(|| {
            Arc::new(Slot { writer: Mutex::new(()), current: RwLock::new(Arc::new(loaded)) })
        });
        Ok(Arc::clone(slot))
    }

    pub fn create(
        &self,
        db_path: &Path,
        table_names: &[impl AsRef<str>],
        knowledge: &str,
    ) -> Result<Arc<Session>, SessionError> {
        let session = self.engine.create_session(db_path, table_names, knowledge)?;
        self.store.save(&session)?;
        Ok(self.insert(session))
    }

    /// Last committed snapshot.
    pub fn get(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        let slot = self.slot(id)?;
        let current = slot.current.read().unwrap();
        Ok(Arc::clone(&current))
    }

    /// Runs one mutation under the session's writer lock. The result (or a
    /// recorded failure) is persisted before it becomes visible to readers.
    pub fn mutate(
        &self,
        id: &str,
        op: impl FnOnce(&SessionEngine, &Session) -> Result<(Session, ActionResult), Failure>,
    ) -> Result<(Arc<Session>, ActionResult), SessionError> {
        let slot = self.slot(id)?;
        let _writer = slot.writer.lock().unwrap();
        let base = Arc::clone(&slot.current.read().unwrap());
        let publish = |next: Session| -> Result<Arc<Session>, SessionError> {
            self.store.save(&next)?;
            let next = Arc::new(next);
            *slot.current.write().unwrap() = Arc::clone(&next);
            Ok(next)
        };
        match op(&self.engine, &base) {
            Ok((next, result)) => Ok((publish(next)?, result)),
            Err(Failure { error, session }) => {
                if let Some(next) = session {
                    publish(*next)?;
                }
                Err(error)
            }
        }
    }

    pub fn submit_question(&self, id: &str, question: &str) -> Result<(Arc<Session>, ActionResult), SessionError> {
        self.mutate(id, |e, s| e.submit_question(s, question))
    }

    pub fn correct_mapping(
        &self,
        id: &str,
        mention_id: &str,
        fields: &[FieldRef],
    ) -> Result<(Arc<Session>, ActionResult), SessionError> {
        self.mutate(id, |e, s| e.correct_mapping(s, mention_id, fields))
    }

    pub fn confirm_intent(&self, id: &str) -> Result<(Arc<Session>, ActionResult), SessionError> {
        self.mutate(id, |e, s| e.confirm_intent(s))
    }

    pub fn step_action(
        &self,
        id: &str,
        step_id: &str,
        action: &StepAction,
    ) -> Result<(Arc<Session>, ActionResult), SessionError> {
        self.mutate(id, |e, s| e.step_action(s, step_id, action))
    }

    pub fn finalize(&self, id: &str) -> Result<(Arc<Session>, ActionResult), SessionError> {
        self.mutate(id, |e, s| e.finalize(s))
    }

    pub fn reopen(&self, id: &str) -> Result<(Arc<Session>, ActionResult), SessionError> {
        self.mutate(id, |e, s| e.reopen(s))
    }
}
