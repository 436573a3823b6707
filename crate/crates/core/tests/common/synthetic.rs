//! A provider that writes plausible replies for any request, so randomized
//! action sequences never run out of script. A seeded fraction of replies
//! is garbage to exercise the repair and failure paths.

use std::sync::Mutex;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use querytrail_core::llm_gateway::{CompletionRequest, CompletionResult, LlmError, LlmProvider, Purpose};

pub struct SyntheticProvider {
    rng: Mutex<StdRng>,
    garbage_rate: f64,
}

impl SyntheticProvider {
    pub fn new(seed: u64, garbage_rate: f64) -> Self {
        SyntheticProvider { rng: Mutex::new(StdRng::seed_from_u64(seed)), garbage_rate }
    }
}

pub const QUESTIONS: [&str; 3] = [
    "Which city has the most charter schools?",
    "List the schools and their city",
    "How many schools are in each county?",
];

fn linking_reply(question: &str) -> String {
    let mut out = Vec::new();
    let q = question.to_lowercase();
    if q.contains("city") {
        out.push(serde_json::json!({"surface": "city", "fields": [{"table": "schools", "column": "City"}]}));
    }
    if q.contains("charter") {
        out.push(serde_json::json!({"surface": "charter", "fields": [{"table": "schools", "column": "Charter"}]}));
    }
    if q.contains("county") {
        out.push(serde_json::json!({"surface": "county", "fields": [{"table": "schools", "column": "County"}]}));
    }
    serde_json::Value::Array(out).to_string()
}

fn plan_reply() -> String {
    serde_json::json!({"steps": [
        {"id": "s1", "explanation": "Schools with their city.", "sql": "SELECT CDSCode, City FROM schools", "depends_on": []},
        {"id": "s2", "explanation": "Cities of those schools.", "sql": "SELECT City FROM (SELECT CDSCode, City FROM schools)", "depends_on": ["s1"]},
        {"id": "s3", "explanation": "A column that does not exist.", "sql": "SELECT nope FROM schools", "depends_on": []},
        {"id": "s4", "explanation": "Combine.", "sql": "SELECT COUNT(*) FROM (SELECT City FROM (SELECT CDSCode, City FROM schools))", "depends_on": ["s2", "s3"]}
    ]})
    .to_string()
}

/// Ids listed in the regeneration prompt's closing line.
fn requested_ids(request: &CompletionRequest) -> Vec<String> {
    let text = &request.messages().last().expect("messages").content;
    let Some(start) = text.rfind("these ids: [") else { return Vec::new() };
    let rest = &text[start + "these ids: [".len()..];
    let end = rest.find(']').unwrap_or(rest.len());
    rest[..end].split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

impl LlmProvider for SyntheticProvider {
    fn label(&self) -> &str {
        "synthetic"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let garbage = self.rng.lock().unwrap().gen_bool(self.garbage_rate);
        let text = if garbage {
            "I am not able to answer that.".to_string()
        } else {
            match request.purpose() {
                Purpose::Linking => {
                    let user = &request.messages()[1].content;
                    let question = user.rsplit("Question:\n").next().unwrap_or("");
                    linking_reply(question)
                }
                Purpose::Decompose => plan_reply(),
                Purpose::Refine => "```sql\nSELECT 1\n```".to_string(),
                Purpose::Regenerate => {
                    let steps: Vec<_> = requested_ids(request)
                        .into_iter()
                        .map(|id| serde_json::json!({"id": id, "explanation": format!("Regenerated {id}."), "sql": format!("SELECT 'regen {id}'")}))
                        .collect();
                    serde_json::json!({ "steps": steps }).to_string()
                }
                Purpose::Finalize => "SELECT 'final'".to_string(),
            }
        };
        Ok(CompletionResult { text, provider_label: "synthetic".into(), latency: Duration::ZERO })
    }
}
