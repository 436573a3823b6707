//! Chat-completion access behind a provider trait.
//!
//! Three providers ship with the crate: [`LiveProvider`] talks to any
//! chat-completions style HTTP endpoint, [`ScriptedProvider`] answers from
//! canned responses built in code, and [`ReplayProvider`] answers from a
//! transcript file. The scripted and replay providers are keyed by
//! [`request_digest`], so a missing entry is always an error and never a
//! silent fallback.

mod providers;
mod structured;
mod transcript;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use providers::{CallRecord, LiveConfig, LiveProvider, RecordingProvider, ReplayProvider, ScriptedProvider};
pub use structured::{
    complete_with_repair, parse_structured, repair_instruction, LinkProposal, OutputKind, PlanDraft, ProposedField,
    RepairError, StepDraft, Structured,
};
pub use transcript::{load_transcript, read_transcript, record_transcript, TranscriptEntry};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("provider error: {0}")]
    ProviderError(String),
    #[error("no scripted response for request digest {digest} ({purpose})")]
    NoScriptEntry { digest: String, purpose: Purpose },
    #[error("malformed model output: {0}")]
    MalformedOutput(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transcript i/o error: {0}")]
    IoError(String),
    #[error("corrupt transcript at line {line}: {reason}")]
    CorruptTranscript { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// Why a completion is requested. Part of the request digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Linking,
    Decompose,
    Refine,
    Regenerate,
    Finalize,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Linking => "linking",
            Purpose::Decompose => "decompose",
            Purpose::Refine => "refine",
            Purpose::Regenerate => "regenerate",
            Purpose::Finalize => "finalize",
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    messages: Vec<ChatMessage>,
    purpose: Purpose,
    temperature: f32,
}

impl CompletionRequest {
    /// Temperature defaults to 0.0.
    pub fn new(purpose: Purpose, messages: Vec<ChatMessage>) -> Result<Self, LlmError> {
        Self::with_temperature(purpose, messages, 0.0)
    }

    pub fn with_temperature(
        purpose: Purpose,
        messages: Vec<ChatMessage>,
        temperature: f32,
    ) -> Result<Self, LlmError> {
        if !(0.0..=1.0).contains(&temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {temperature} outside [0, 1]"
            )));
        }
        if !messages.iter().any(|m| m.role == Role::User) {
            return Err(LlmError::InvalidRequest("no user message".into()));
        }
        if let Some(m) = messages
            .iter()
            .find(|m| m.role != Role::Assistant && m.content.trim().is_empty())
        {
            return Err(LlmError::InvalidRequest(format!(
                "empty {} message",
                m.role.as_str()
            )));
        }
        Ok(CompletionRequest { messages, purpose, temperature })
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    pub fn temperature(&self) -> f32 {
        self.temperature
    }

    /// The same request with one more user message appended.
    pub fn followed_by(&self, instruction: impl Into<String>) -> Result<Self, LlmError> {
        let mut messages = self.messages.clone();
        messages.push(ChatMessage::user(instruction));
        Self::with_temperature(self.purpose, messages, self.temperature)
    }

    pub fn digest(&self) -> String {
        request_digest(self.purpose, &self.messages)
    }
}

/// SHA-256 over the purpose and the whitespace-normalized messages.
///
/// Temperature is not part of the digest.
pub fn request_digest(purpose: Purpose, messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(purpose.as_str().as_bytes());
    hasher.update([0x1d]);
    for m in messages {
        hasher.update(m.role.as_str().as_bytes());
        hasher.update([0x1f]);
        let normalized = m.content.split_whitespace().collect::<Vec<_>>().join(" ");
        hasher.update(normalized.as_bytes());
        hasher.update([0x1e]);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    pub text: String,
    pub provider_label: String,
    pub latency: Duration,
}

pub trait LlmProvider: Send + Sync {
    fn label(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError>;
}
