//! Pulling structured values out of free-form model replies.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use super::{CompletionRequest, LlmError, LlmProvider};
use crate::sql_lexer::{is_word_char, tokenize, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// `[{"surface": str, "fields": [{"table": str, "column": str}]}]`
    LinkingJson,
    /// `{"steps": [{"id": str, "explanation": str, "sql": str, "depends_on": [str]}]}`
    PlanJson,
    /// A single SQL statement.
    SqlOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedField {
    pub table: String,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkProposal {
    pub surface: String,
    pub fields: Vec<ProposedField>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDraft {
    #[serde(deserialize_with = "string_or_number")]
    pub id: String,
    pub explanation: String,
    pub sql: String,
    /// Absent in regeneration replies that keep the existing dependencies.
    #[serde(default, deserialize_with = "opt_ids")]
    pub depends_on: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDraft {
    pub steps: Vec<StepDraft>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Structured {
    Linking(Vec<LinkProposal>),
    Plan(PlanDraft),
    Sql(String),
}

fn id_from_value(v: Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(format!("expected string or number id, found {other}")),
    }
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    id_from_value(Value::deserialize(d)?).map_err(serde::de::Error::custom)
}

fn opt_ids<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<String>>, D::Error> {
    match Option::<Vec<Value>>::deserialize(d)? {
        None => Ok(None),
        Some(items) => items
            .into_iter()
            .map(id_from_value)
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
            .map_err(serde::de::Error::custom),
    }
}

/// Extracts a value of `kind` from a model reply.
///
/// Code fences are searched first, then the whole reply. For JSON kinds the
/// first balanced `{...}` or `[...]` region that parses and has the expected
/// shape wins.
pub fn parse_structured(text: &str, kind: OutputKind) -> Result<Structured, LlmError> {
    match kind {
        OutputKind::LinkingJson => {
            extract_json::<Vec<LinkProposal>>(text, '[').map(Structured::Linking)
        }
        OutputKind::PlanJson => extract_json::<PlanDraft>(text, '{').map(Structured::Plan),
        OutputKind::SqlOnly => extract_sql(text).map(Structured::Sql),
    }
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // Skip the info string (```json, ```sql).
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

/// End (exclusive byte index) of the balanced JSON region starting at `start`.
fn balanced_end(s: &str, start: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn extract_json<T: serde::de::DeserializeOwned>(text: &str, opener: char) -> Result<T, LlmError> {
    let mut candidates = fenced_blocks(text);
    candidates.push(text);
    let mut first_shape_error: Option<String> = None;
    for candidate in candidates {
        for (start, c) in candidate.char_indices() {
            if c != '{' && c != '[' {
                continue;
            }
            let Some(end) = balanced_end(candidate, start) else { continue };
            let slice = &candidate[start..end];
            let Ok(value) = serde_json::from_str::<Value>(slice) else { continue };
            if c != opener {
                first_shape_error.get_or_insert_with(|| {
                    format!("expected a JSON {}", if opener == '[' { "array" } else { "object" })
                });
                continue;
            }
            match serde_json::from_value::<T>(value) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    first_shape_error.get_or_insert_with(|| e.to_string());
                }
            }
        }
    }
    Err(LlmError::MalformedOutput(
        first_shape_error.unwrap_or_else(|| "no JSON value found in reply".to_string()),
    ))
}

const SQL_STARTERS: [&str; 4] = ["select", "with", "values", "explain"];

fn starts_with_keyword(s: &str) -> bool {
    let word: String = s.chars().take_while(|c| is_word_char(*c)).collect();
    SQL_STARTERS.iter().any(|k| word.eq_ignore_ascii_case(k))
}

fn extract_sql(text: &str) -> Result<String, LlmError> {
    let blocks = fenced_blocks(text);
    let fenced = !blocks.is_empty();
    let source = blocks.first().copied().unwrap_or(text);

    let start = if fenced || starts_with_keyword(source.trim_start()) {
        Some(source.len() - source.trim_start().len())
    } else {
        let mut offset = 0;
        let mut found = None;
        for line in source.split_inclusive('\n') {
            let trimmed = line.trim_start();
            if starts_with_keyword(trimmed) {
                found = Some(offset + line.len() - trimmed.len());
                break;
            }
            offset += line.len();
        }
        found.or_else(|| find_select_word(source))
    };
    let Some(start) = start else {
        return Err(LlmError::MalformedOutput("no SQL statement found in reply".into()));
    };
    let body = &source[start..];
    let chars: Vec<char> = body.chars().collect();
    let mut end = chars.len();
    let mut cut_at_semicolon = false;
    for t in tokenize(&chars) {
        if t.kind == TokenKind::Symbol(';') {
            end = t.start;
            cut_at_semicolon = true;
            break;
        }
    }
    let mut stmt: String = chars[..end].iter().collect();
    if !fenced && !cut_at_semicolon {
        // Unfenced prose after the statement is usually separated by a blank line.
        if let Some(i) = stmt.find("\n\n") {
            stmt.truncate(i);
        }
    }
    let stmt = stmt.trim().to_string();
    if stmt.is_empty() {
        return Err(LlmError::MalformedOutput("empty SQL statement".into()));
    }
    Ok(stmt)
}

fn find_select_word(s: &str) -> Option<usize> {
    let lower = s.to_ascii_lowercase();
    let mut from = 0;
    while let Some(i) = lower[from..].find("select") {
        let at = from + i;
        let before_ok = lower[..at].chars().next_back().is_none_or(|c| !is_word_char(c));
        let after_ok = lower[at + 6..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            return Some(at);
        }
        from = at + 6;
    }
    None
}

/// Failure of a completion followed by interpretation of its text.
#[derive(Debug, Clone, PartialEq)]
pub enum RepairError<E> {
    Provider(LlmError),
    /// The reply was still unusable after the single repair attempt.
    Rejected(E),
}

impl<E: fmt::Display> fmt::Display for RepairError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepairError::Provider(e) => e.fmt(f),
            RepairError::Rejected(e) => e.fmt(f),
        }
    }
}

pub fn repair_instruction(reason: &str) -> String {
    format!(
        "Your previous reply could not be used: {reason}. Reply again with only the requested \
         output in exactly the required format (valid JSON matching the schema, or a single SQL \
         statement), with no commentary."
    )
}

/// Completes `request` and interprets the reply, resending once with a
/// repair instruction if interpretation fails.
///
/// An empty reply counts as a provider failure and is not repaired.
pub fn complete_with_repair<T, E: fmt::Display>(
    provider: &dyn LlmProvider,
    request: &CompletionRequest,
    mut interpret: impl FnMut(&str) -> Result<T, E>,
) -> Result<T, RepairError<E>> {
    let call = |req: &CompletionRequest| -> Result<String, RepairError<E>> {
        let result = provider.complete(req).map_err(RepairError::Provider)?;
        if result.text.trim().is_empty() {
            return Err(RepairError::Provider(LlmError::ProviderError(format!(
                "{} provider returned an empty completion",
                result.provider_label
            ))));
        }
        Ok(result.text)
    };
    let first = call(request)?;
    let reason = match interpret(&first) {
        Ok(v) => return Ok(v),
        Err(e) => e.to_string(),
    };
    tracing::debug!(purpose = %request.purpose(), %reason, "repair retry");
    let repair = request
        .followed_by(repair_instruction(&reason))
        .map_err(RepairError::Provider)?;
    let second = call(&repair)?;
    interpret(&second).map_err(RepairError::Rejected)
}
