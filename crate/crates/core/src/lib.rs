//! Core of querytrail: schema catalog, model gateway, intent linking,
//! plan graphs, sandboxed execution, SQL attribution and sessions.

pub mod intent_linker;
pub mod llm_gateway;
pub mod plan_graph;
pub mod prompts;
pub mod schema_catalog;
pub mod session_engine;
pub mod sql_attribution;
pub mod sql_executor;
pub mod sql_lexer;

pub use intent_linker::{FieldRef, LinkError, LinkingResult, Mapping, Mention};
pub use llm_gateway::{CompletionRequest, LlmError, LlmProvider, Purpose};
pub use plan_graph::{DependencyTree, FinalSql, Plan, PlanError, Step, StepStatus};
pub use schema_catalog::{SchemaError, SchemaSnapshot, SchemaSubset};
pub use sql_attribution::{annotate, AnnotatedSql, DepthSpan, StepSpan};
pub use sql_executor::{ExecError, ExecErrorKind, ExecLimits, ResultPreview};
pub use session_engine::{Session, SessionEngine, SessionError, SessionManager, SessionState, SessionStore};
