//! Prompt construction for every model call.
//!
//! Prompts are plain deterministic text: identical inputs always produce an
//! identical [`CompletionRequest`] and therefore the same request digest,
//! which is what scripted and replayed sessions rely on.

use std::fmt::Write as _;

use crate::llm_gateway::{ChatMessage, CompletionRequest, LlmError, Purpose};
use crate::plan_graph::Step;
use crate::schema_catalog::{render_schema_prompt, SchemaSubset};

const LINKING_SYSTEM: &str = "You link natural-language questions to database schemas. \
Identify each phrase in the question that refers to data in the schema and list the columns it refers to. \
Copy each phrase exactly as it appears in the question. Only use tables and columns from the schema. \
Reply with JSON only, in the form \
[{\"surface\": \"phrase from the question\", \"fields\": [{\"table\": \"t\", \"column\": \"c\"}]}]. \
Reply with [] if nothing in the question refers to the schema.";

const DECOMPOSE_SYSTEM: &str = "You write SQLite queries step by step. \
Break the question into a short sequence of simple sub-queries. Each step has an id, a one-sentence \
explanation, an executable SQLite SELECT statement, and the ids of earlier steps it builds on. \
A step may only depend on steps listed before it. When a step builds on another, embed that step's SQL \
as a subquery so that every step runs on its own. The last step answers the whole question. \
Reply with JSON only, in the form \
{\"steps\": [{\"id\": \"s1\", \"explanation\": \"...\", \"sql\": \"SELECT ...\", \"depends_on\": []}]}.";

const REFINE_SYSTEM: &str = "You fix SQLite queries. Given a statement and the error it produced, \
reply with a corrected statement only, with no commentary.";

const REGENERATE_SYSTEM: &str = "You revise step-by-step SQLite query plans. Steps marked FIXED must not \
change. Rewrite every step marked REWRITE so that it is consistent with the fixed steps, keeping its id. \
You may also rewrite the edited step's SQL if its explanation no longer matches it. \
Reply with JSON only, in the form \
{\"steps\": [{\"id\": \"...\", \"explanation\": \"...\", \"sql\": \"SELECT ...\"}]}.";

const FINALIZE_SYSTEM: &str = "You compose step-by-step SQLite query plans into one statement. \
Combine the final steps of the plan into a single executable SQLite SELECT statement that answers the \
question, reusing the steps' SQL as subqueries where possible. Reply with the SQL statement only.";

fn context_block(question: &str, schema: &SchemaSubset, knowledge: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Schema:\n{}", render_schema_prompt(schema));
    if !knowledge.trim().is_empty() {
        let _ = writeln!(out, "External knowledge:\n{}\n", knowledge.trim());
    }
    let _ = write!(out, "Question:\n{}", question.trim());
    out
}

fn render_step(out: &mut String, step: &Step, marker: &str) {
    let _ = writeln!(out, "[{marker}] id: {}", step.id);
    if !step.depends_on.is_empty() {
        let _ = writeln!(out, "depends_on: {}", step.depends_on.join(", "));
    }
    let _ = writeln!(out, "explanation: {}", step.explanation);
    let _ = writeln!(out, "sql: {}\n", step.sql);
}

pub fn linking_request(
    question: &str,
    subset: &SchemaSubset,
    knowledge: &str,
) -> Result<CompletionRequest, LlmError> {
    CompletionRequest::new(
        Purpose::Linking,
        vec![
            ChatMessage::system(LINKING_SYSTEM),
            ChatMessage::user(context_block(question, subset, knowledge)),
        ],
    )
}

pub fn decompose_request(
    question: &str,
    focused: &SchemaSubset,
    knowledge: &str,
) -> Result<CompletionRequest, LlmError> {
    CompletionRequest::new(
        Purpose::Decompose,
        vec![
            ChatMessage::system(DECOMPOSE_SYSTEM),
            ChatMessage::user(context_block(question, focused, knowledge)),
        ],
    )
}

pub fn refine_request(
    sql: &str,
    error_message: &str,
    focused: &SchemaSubset,
) -> Result<CompletionRequest, LlmError> {
    let body = format!(
        "Schema:\n{}\nStatement:\n{}\n\nError:\n{}",
        render_schema_prompt(focused),
        sql.trim(),
        error_message.trim()
    );
    CompletionRequest::new(
        Purpose::Refine,
        vec![ChatMessage::system(REFINE_SYSTEM), ChatMessage::user(body)],
    )
}

/// `fixed` are the edited step and its ancestors, `rewrite` the stale
/// descendants, both in plan order.
pub fn regenerate_request(
    question: &str,
    focused: &SchemaSubset,
    knowledge: &str,
    edited_step: &str,
    fixed: &[&Step],
    rewrite: &[&Step],
) -> Result<CompletionRequest, LlmError> {
    let mut body = context_block(question, focused, knowledge);
    body.push_str("\n\nPlan:\n");
    for step in fixed {
        let marker = if step.id == edited_step { "FIXED, EDITED" } else { "FIXED" };
        render_step(&mut body, step, marker);
    }
    for step in rewrite {
        render_step(&mut body, step, "REWRITE");
    }
    let ids: Vec<&str> = rewrite.iter().map(|s| s.id.as_str()).collect();
    let _ = write!(
        body,
        "Step {edited_step} was edited by the user. Return replacements for these ids: [{}].",
        ids.join(", ")
    );
    CompletionRequest::new(
        Purpose::Regenerate,
        vec![ChatMessage::system(REGENERATE_SYSTEM), ChatMessage::user(body)],
    )
}

pub fn finalize_request(
    question: &str,
    focused: &SchemaSubset,
    knowledge: &str,
    steps: &[Step],
    leaves: &[&str],
) -> Result<CompletionRequest, LlmError> {
    let mut body = context_block(question, focused, knowledge);
    body.push_str("\n\nPlan:\n");
    for step in steps {
        render_step(&mut body, step, "STEP");
    }
    let _ = write!(body, "Final steps to combine: [{}].", leaves.join(", "));
    CompletionRequest::new(
        Purpose::Finalize,
        vec![ChatMessage::system(FINALIZE_SYSTEM), ChatMessage::user(body)],
    )
}
