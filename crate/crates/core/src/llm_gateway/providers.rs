use std::collections::HashMap;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{debug, warn};

use super::transcript::TranscriptEntry;
use super::{CompletionRequest, CompletionResult, LlmError, LlmProvider, Purpose};

/// One lookup made against a scripted or replay provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub purpose: Purpose,
    pub digest: String,
    pub answered: bool,
}

/// Digest-keyed response table shared by the scripted and replay providers.
#[derive(Debug, Default)]
struct DigestTable {
    responses: HashMap<String, String>,
    calls: Mutex<Vec<CallRecord>>,
}

impl DigestTable {
    fn lookup(&self, label: &str, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let started = Instant::now();
        let digest = request.digest();
        let found = self.responses.get(&digest).cloned();
        self.calls.lock().expect("call log poisoned").push(CallRecord {
            purpose: request.purpose(),
            digest: digest.clone(),
            answered: found.is_some(),
        });
        match found {
            Some(text) => Ok(CompletionResult {
                text,
                provider_label: label.to_string(),
                latency: started.elapsed(),
            }),
            None => Err(LlmError::NoScriptEntry { digest, purpose: request.purpose() }),
        }
    }

    fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call log poisoned").clone()
    }
}

/// Canned responses for tests, keyed by request digest.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    table: DigestTable,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut p = Self::new();
        for e in entries {
            p.table.responses.insert(e.digest, e.response);
        }
        p
    }

    pub fn with_response(mut self, request: &CompletionRequest, response: impl Into<String>) -> Self {
        self.insert(request, response);
        self
    }

    pub fn insert(&mut self, request: &CompletionRequest, response: impl Into<String>) {
        self.table.responses.insert(request.digest(), response.into());
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, response: impl Into<String>) {
        self.table.responses.insert(digest.into(), response.into());
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        let mut out: Vec<TranscriptEntry> = self
            .table
            .responses
            .iter()
            .map(|(d, r)| TranscriptEntry { digest: d.clone(), response: r.clone() })
            .collect();
        out.sort_by(|a, b| a.digest.cmp(&b.digest));
        out
    }

    pub fn len(&self) -> usize {
        self.table.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.responses.is_empty()
    }

    /// Every lookup made so far, answered or not.
    pub fn calls(&self) -> Vec<CallRecord> {
        self.table.calls()
    }
}

impl LlmProvider for ScriptedProvider {
    fn label(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        self.table.lookup(self.label(), request)
    }
}

/// Answers from a recorded transcript.
#[derive(Debug, Default)]
pub struct ReplayProvider {
    table: DigestTable,
}

impl ReplayProvider {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut table = DigestTable::default();
        for e in entries {
            table.responses.insert(e.digest, e.response);
        }
        ReplayProvider { table }
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.table.responses.contains_key(digest)
    }

    pub fn len(&self) -> usize {
        self.table.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.responses.is_empty()
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.table.calls()
    }
}

impl LlmProvider for ReplayProvider {
    fn label(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        self.table.lookup(self.label(), request)
    }
}

/// Wraps another provider and keeps a transcript of every answered request.
pub struct RecordingProvider<P> {
    inner: P,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl<P: LlmProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider { inner, entries: Mutex::new(Vec::new()) }
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().expect("transcript poisoned").clone()
    }
}

impl<P: LlmProvider> LlmProvider for RecordingProvider<P> {
    fn label(&self) -> &str {
        self.inner.label()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let result = self.inner.complete(request)?;
        self.entries.lock().expect("transcript poisoned").push(TranscriptEntry {
            digest: request.digest(),
            response: result.text.clone(),
        });
        Ok(result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub request_timeout: Duration,
    /// Retries after the first attempt on transport errors, 429 and 5xx.
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        LiveConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            request_timeout: Duration::from_secs(60),
            max_retries: 2,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

/// Chat-completions over HTTP.
///
/// Request body: `{"model", "messages": [{"role", "content"}], "temperature"}`
/// with a bearer token. The reply text is read from
/// `choices[0].message.content`.
pub struct LiveProvider {
    config: LiveConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        LiveProvider { config, agent }
    }

    pub fn request_body(&self, request: &CompletionRequest) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": request.messages(),
            "temperature": request.temperature(),
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        let mut response = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(body)
            .map_err(|e| Attempt::Retry(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(format!("reading body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
        }
        extract_content(&text).map_err(Attempt::Fatal)
    }
}

pub(crate) fn extract_content(body: &str) -> Result<String, String> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| "response lacks choices[0].message.content".to_string())
}

impl LlmProvider for LiveProvider {
    fn label(&self) -> &str {
        "live"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let started = Instant::now();
        let body = self.request_body(request);
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            debug!(purpose = %request.purpose(), attempt, "live completion");
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(CompletionResult {
                        text,
                        provider_label: self.label().to_string(),
                        latency: started.elapsed(),
                    })
                }
                Err(Attempt::Fatal(msg)) => return Err(LlmError::ProviderError(msg)),
                Err(Attempt::Retry(msg)) if attempt >= self.config.max_retries => {
                    return Err(LlmError::ProviderError(format!(
                        "{msg} (after {} attempts)",
                        attempt + 1
                    )))
                }
                Err(Attempt::Retry(msg)) => {
                    warn!(%msg, "transient provider failure, retrying");
                    thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
            }
        }
    }
}
