//! The end-to-end "SAT Scores" scenario and its scripted model replies.

use std::path::Path;
use std::sync::Arc;

use querytrail_core::intent_linker::{build_linking, confirm, derive_focused_schema};
use querytrail_core::llm_gateway::{parse_structured, OutputKind, StepDraft, Structured, TranscriptEntry};
use querytrail_core::prompts;
use querytrail_core::schema_catalog::{introspect_database, select_tables};

pub const QUESTION: &str = "Which city is home to the Alameda county school with the highest total SAT Scores?";
pub const KNOWLEDGE: &str = "Total SAT score = AvgScrRead + AvgScrMath + AvgScrWrite.";
pub const TABLES: [&str; 2] = ["satscores", "schools"];

pub const LINKING_REPLY: &str = r#"Sure. Here is how the question maps onto the schema:

```json
[
  {"surface": "SAT Scores", "fields": [
    {"table": "satscores", "column": "AvgScrRead"},
    {"table": "satscores", "column": "AvgScrMath"},
    {"table": "satscores", "column": "AvgScrWrite"}
  ]},
  {"surface": "Alameda county", "fields": [{"table": "satscores", "column": "cname"}]},
  {"surface": "city", "fields": [{"table": "schools", "column": "City"}]}
]
```

Let me know if any of these look wrong."#;

const S1: &str = "SELECT cds, AvgScrRead, AvgScrMath, AvgScrWrite FROM satscores WHERE cname = 'Alameda'";

/// Five steps, each embedding its predecessor as a subquery.
pub fn steps() -> Vec<StepDraft> {
    let s2 = format!("SELECT cds, AvgScrRead + AvgScrMath + AvgScrWrite AS total FROM ({S1}) WHERE AvgScrRead IS NOT NULL");
    let s3 = format!("SELECT cds FROM ({s2}) ORDER BY total DESC LIMIT 1");
    let s4 = format!("SELECT School, City FROM schools WHERE CDSCode = ({s3})");
    let s5 = format!("SELECT City FROM ({s4})");
    let draft = |id: &str, explanation: &str, sql: String, deps: &[&str]| StepDraft {
        id: id.into(),
        explanation: explanation.into(),
        sql,
        depends_on: Some(deps.iter().map(|d| d.to_string()).collect()),
    };
    vec![
        draft("s1", "Get the reading, math and writing averages of schools in Alameda county.", S1.to_string(), &[]),
        draft("s2", "Add the three averages into a total SAT score, skipping schools without scores.", s2, &["s1"]),
        draft("s3", "Keep the school with the highest total.", s3, &["s2"]),
        draft("s4", "Look up that school's name and city.", s4, &["s3"]),
        draft("s5", "Return the city.", s5, &["s4"]),
    ]
}

pub fn plan_reply() -> String {
    let body = serde_json::to_string_pretty(&serde_json::json!({ "steps": steps() })).unwrap();
    format!("The question breaks down into five sub-queries.\n\n```json\n{body}\n```\n")
}

/// Scripted replies for linking and decomposition, keyed by the digests of
/// the requests a session over `db` will send.
pub fn transcript(db: &Path) -> Vec<TranscriptEntry> {
    let schema = Arc::new(introspect_database(db).unwrap());
    let selected = select_tables(&schema, &TABLES).unwrap();
    let link_req = prompts::linking_request(QUESTION, &selected, KNOWLEDGE).unwrap();
    let proposals = match parse_structured(LINKING_REPLY, OutputKind::LinkingJson).unwrap() {
        Structured::Linking(p) => p,
        _ => unreachable!(),
    };
    let linking = build_linking(QUESTION, KNOWLEDGE, &proposals, &selected).result;
    let focused = derive_focused_schema(&confirm(&linking), &selected).unwrap();
    let plan_req = prompts::decompose_request(QUESTION, &focused, KNOWLEDGE).unwrap();
    vec![
        TranscriptEntry { digest: link_req.digest(), response: LINKING_REPLY.to_string() },
        TranscriptEntry { digest: plan_req.digest(), response: plan_reply() },
    ]
}

/// Expected answer, computed directly against the database.
pub fn expected_city(db: &Path) -> String {
    let conn = rusqlite::Connection::open(db).unwrap();
    conn.query_row(
        "SELECT s.City FROM satscores t JOIN schools s ON s.CDSCode = t.cds \
         WHERE t.cname = 'Alameda' AND t.AvgScrRead IS NOT NULL \
         ORDER BY t.AvgScrRead + t.AvgScrMath + t.AvgScrWrite DESC LIMIT 1",
        [],
        |r| r.get(0),
    )
    .unwrap()
}
