//! Whole-criterion checks with independent oracles.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use querytrail_core::intent_linker::{apply_correction, build_linking, confirm, derive_focused_schema, FieldRef};
use querytrail_core::llm_gateway::{
    complete_with_repair, parse_structured, ChatMessage, CompletionRequest, CompletionResult, LinkProposal,
    LlmError, LlmProvider, OutputKind, PlanDraft, ProposedField, RepairError, StepDraft, Structured,
};
use querytrail_core::plan_graph::{Plan, StepOutcome, StepStatus};
use querytrail_core::schema_catalog::{introspect_database, select_tables, SubsetTable};
use querytrail_core::session_engine::{replay, Failure, Session, SessionEngine, SessionState, SessionStore, StepAction};
use querytrail_core::sql_attribution::depth_scan;
use querytrail_core::sql_executor::{classify_statement, ExecErrorKind, ExecLimits, ResultPreview, SqlExecutor};

use super::file_digest;
use super::synthetic::{SyntheticProvider, QUESTIONS};

pub type CheckResult = Result<String, String>;

// ---------------------------------------------------------------- cascade

fn random_plan(rng: &mut StdRng) -> Plan {
    let n = rng.gen_range(1..=20);
    let drafts: Vec<StepDraft> = (0..n)
        .map(|i| {
            let mut deps: Vec<String> = (0..i).filter(|_| rng.gen_bool(0.25)).map(|j| format!("n{j}")).collect();
            deps.truncate(3);
            StepDraft {
                id: format!("n{i}"),
                explanation: format!("step {i}"),
                sql: format!("SELECT {i}"),
                depends_on: Some(deps),
            }
        })
        .collect();
    let mut plan = Plan::from_drafts(&drafts).expect("generated plans are valid");
    for i in 0..n {
        if rng.gen_bool(0.5) {
            plan = plan.with_execution(&format!("n{i}"), StepOutcome::Preview(ResultPreview::empty())).unwrap();
        }
    }
    plan
}

/// Transitive closure by repeated relaxation over the adjacency matrix,
/// independent of the plan's own traversal.
fn reachable_from(plan: &Plan, origin: usize) -> BTreeSet<usize> {
    let steps = plan.steps();
    let n = steps.len();
    let mut reach = vec![vec![false; n]; n];
    for (j, s) in steps.iter().enumerate() {
        for d in &s.depends_on {
            let i = steps.iter().position(|p| &p.id == d).unwrap();
            reach[i][j] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (0..n).filter(|&j| reach[origin][j]).collect()
}

fn step_json(plan: &Plan, i: usize) -> String {
    serde_json::to_string(&plan.steps()[i]).unwrap()
}

/// Edit, refine or regenerate at a random node of `cases` random DAGs.
pub fn check_cascade(cases: usize, seed: u64) -> CheckResult {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut counts = [0usize; 3];
    for case in 0..cases {
        let before = random_plan(&mut rng);
        let n = before.steps().len();
        let k = rng.gen_range(0..n);
        let id = before.steps()[k].id.clone();
        let descendants = reachable_from(&before, k);
        let op = rng.gen_range(0..3);
        counts[op] += 1;
        let after = match op {
            0 => before.edit_step(&id, Some("edited explanation"), rng.gen_bool(0.5).then_some("SELECT 'edited'")),
            1 => before.with_refined_sql(&id, "SELECT 'refined'"),
            _ => {
                let edited = before.edit_step(&id, None, Some("SELECT 'edited'")).unwrap();
                let targets = edited.regeneration_targets(&id).unwrap();
                let drafts: Vec<StepDraft> = targets
                    .iter()
                    .map(|t| StepDraft {
                        id: t.clone(),
                        explanation: format!("regenerated {t}"),
                        sql: format!("SELECT 'regen {t}'"),
                        depends_on: None,
                    })
                    .collect();
                edited.with_replacements(&id, &drafts)
            }
        }
        .map_err(|e| format!("case {case}: operation failed: {e}"))?;

        for j in 0..n {
            if j == k {
                continue;
            }
            let s = &after.steps()[j];
            if descendants.contains(&j) {
                let want = if op == 2 { StepStatus::Pending } else { StepStatus::Stale };
                if s.status != want {
                    return Err(format!("case {case}: descendant {} is {:?}, expected {want:?}", s.id, s.status));
                }
                if op == 2 && s.sql != format!("SELECT 'regen {}'", s.id) {
                    return Err(format!("case {case}: descendant {} was not regenerated", s.id));
                }
            } else {
                if step_json(&after, j) != step_json(&before, j) {
                    return Err(format!("case {case}: non-descendant {} changed", s.id));
                }
                if s.status == StepStatus::Stale {
                    return Err(format!("case {case}: non-descendant {} marked stale", s.id));
                }
            }
        }
        if after.version() <= before.version() {
            return Err(format!("case {case}: version did not increase"));
        }
    }
    Ok(format!(
        "{cases} random DAGs ({} edit, {} refine, {} regenerate), 0 violations",
        counts[0], counts[1], counts[2]
    ))
}

// ------------------------------------------------------------------ depth

/// Depth at `i` = opens strictly before `i` minus closes up to and
/// including `i`. Only valid for balanced, quote-free input.
fn naive_depths(s: &str) -> Vec<usize> {
    let chars: Vec<char> = s.chars().collect();
    (0..chars.len())
        .map(|i| {
            let opens = chars[..i].iter().filter(|&&c| c == '(').count();
            let closes = chars[..=i].iter().filter(|&&c| c == ')').count();
            opens - closes
        })
        .collect()
}

fn expand(s: &str) -> Result<Vec<usize>, String> {
    let spans = depth_scan(s).spans;
    let mut out = Vec::new();
    let mut pos = 0;
    for (i, span) in spans.iter().enumerate() {
        if span.char_start != pos || span.char_end <= span.char_start {
            return Err(format!("spans do not tile {s:?}"));
        }
        if i > 0 && spans[i - 1].depth == span.depth {
            return Err(format!("adjacent spans share depth in {s:?}"));
        }
        out.extend(std::iter::repeat_n(span.depth, span.char_end - span.char_start));
        pos = span.char_end;
    }
    if pos != s.chars().count() {
        return Err(format!("spans cover {pos} of {} chars in {s:?}", s.chars().count()));
    }
    Ok(out)
}

fn balanced_string(rng: &mut StdRng) -> String {
    const FILL: [char; 8] = ['a', 'b', 'x', '1', ' ', ',', '*', '\n'];
    let len = rng.gen_range(0..80);
    let mut depth = 0usize;
    let mut out = String::new();
    for _ in 0..len {
        match rng.gen_range(0..10) {
            0..=2 => {
                out.push('(');
                depth += 1;
            }
            3..=4 if depth > 0 => {
                out.push(')');
                depth -= 1;
            }
            _ => out.push(*FILL.choose(rng).unwrap()),
        }
    }
    out.extend(std::iter::repeat_n(')', depth));
    out
}

/// Hand-derived depth strings: one digit per character of the SQL.
pub const DEPTH_CORPUS: [(&str, &str); 30] = [
    ("SELECT 1", "00000000"),
    ("f(a)", "0010"),
    ("f((a))", "001210"),
    ("(a)(b)", "010010"),
    ("SELECT '(' FROM t", "00000000000000000"),
    ("SELECT ')' FROM t", "00000000000000000"),
    ("('(')", "01110"),
    ("'it''s (' (x)", "0000000000010"),
    ("\"a(\" (b)", "00000010"),
    ("\"x\"\"(\" y", "00000000"),
    ("a -- (\nb(c)", "00000000010"),
    ("(a -- )\n)", "011111110"),
    ("/* ( */ x", "000000000"),
    ("(/* ) */)", "011111110"),
    (")a", "00"),
    ("a)(b", "0001"),
    ("((", "01"),
    ("(()", "011"),
    (
        "SELECT * FROM (SELECT a FROM (SELECT a FROM t))",
        "00000000000000011111111111111122222222222222210",
    ),
    ("x IN ('a', 'b)')", "0000001111111110"),
    ("'unterminated (", "000000000000000"),
    ("/* unterminated (", "00000000000000000"),
    ("f(g(h(x)))", "0011223210"),
    ("(a)b(c)", "0100010"),
    ("'' (a)", "000010"),
    ("\"\" (a)", "000010"),
    ("e'(' (x)", "00000010"),
    ("SELECT COUNT(*) FROM t -- )\n", "0000000000000100000000000000"),
    ("", ""),
    ("(\n)", "010"),
];

pub fn check_depth(fuzz: usize, seed: u64) -> CheckResult {
    let mut rng = StdRng::seed_from_u64(seed);
    for case in 0..fuzz {
        let s = balanced_string(&mut rng);
        let got = expand(&s)?;
        if got != naive_depths(&s) {
            return Err(format!("fuzz case {case}: depth mismatch on {s:?}"));
        }
    }
    for (sql, expected) in DEPTH_CORPUS {
        let want: Vec<usize> = expected.chars().map(|c| c.to_digit(10).unwrap() as usize).collect();
        if want.len() != sql.chars().count() {
            return Err(format!("corpus entry {sql:?} has a misaligned expectation"));
        }
        let got = expand(sql)?;
        if got != want {
            return Err(format!("corpus {sql:?}: got {got:?}"));
        }
    }
    Ok(format!("{fuzz} fuzzed strings match the naive counter; {} handcrafted cases exact", DEPTH_CORPUS.len()))
}

// ------------------------------------------------------------ no mutation

/// `(sql, classified as forbidden)`.
pub const ADVERSARIAL: [(&str, bool); 40] = [
    ("DROP TABLE schools", true),
    ("DELETE FROM schools", true),
    ("UPDATE schools SET City = 'x'", true),
    ("INSERT INTO schools (CDSCode) VALUES ('x')", true),
    ("REPLACE INTO schools (CDSCode) VALUES ('x')", true),
    ("CREATE TABLE evil(a)", true),
    ("ALTER TABLE schools ADD COLUMN evil TEXT", true),
    ("PRAGMA writable_schema = ON", true),
    ("PRAGMA journal_mode = WAL", true),
    ("PRAGMA user_version = 7", true),
    ("ATTACH DATABASE 'evil.db' AS evil", true),
    ("DETACH DATABASE main", true),
    ("VACUUM", true),
    ("REINDEX", true),
    ("ANALYZE", true),
    ("BEGIN; DELETE FROM schools; COMMIT", true),
    ("SELECT 1; DROP TABLE schools", true),
    ("SELECT 1; -- comment\nDELETE FROM schools", true),
    ("/* SELECT */ DELETE FROM schools", true),
    ("-- SELECT\nDROP TABLE satscores", true),
    ("SELECT 1 /* ; */ ; UPDATE schools SET City = NULL", true),
    ("WITH x AS (SELECT 1) DELETE FROM schools", true),
    ("WITH x AS (SELECT 1) INSERT INTO schools (CDSCode) SELECT * FROM x", true),
    ("EXPLAIN DELETE FROM schools", true),
    ("SELECT ';'; DROP TABLE schools", true),
    ("select 1;\n\ndrop table schools;", true),
    ("CREATE TRIGGER t AFTER INSERT ON schools BEGIN DELETE FROM frpm; END", true),
    ("SAVEPOINT a", true),
    ("  dRoP   TABLE frpm", true),
    ("EXPLAIN QUERY PLAN UPDATE schools SET City = 'x'", true),
    ("SELECT * FROM schools", false),
    ("SELECT load_extension('/tmp/evil')", false),
    ("SELECT writefile('/tmp/x', 'y')", false),
    ("SELECT 'DROP TABLE schools'", false),
    ("WITH d AS (SELECT 1) SELECT * FROM d", false),
    ("SELECT * FROM pragma_table_info('schools')", false),
    ("VALUES (1), (2)", false),
    ("EXPLAIN SELECT * FROM schools", false),
    ("SELECT \"DELETE\" FROM (SELECT 1 AS \"DELETE\")", false),
    ("SELECT 1; -- trailing DROP TABLE schools", false),
];

fn dir_listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

pub fn check_no_mutation(db: &Path) -> CheckResult {
    let before = file_digest(db);
    let listing = dir_listing(db.parent().unwrap());
    let executor = SqlExecutor::new(db, ExecLimits::default());
    let mut forbidden = 0;
    for (sql, expect_forbidden) in ADVERSARIAL {
        let is_forbidden = classify_statement(sql).is_forbidden();
        if is_forbidden != expect_forbidden {
            return Err(format!("{sql:?}: classified forbidden={is_forbidden}"));
        }
        let opened = executor.connections_opened();
        let result = executor.execute_preview(sql);
        if expect_forbidden {
            forbidden += 1;
            match result {
                Err(e) if e.kind == ExecErrorKind::Forbidden => {}
                other => return Err(format!("{sql:?}: expected forbidden, got {other:?}")),
            }
            if executor.connections_opened() != opened {
                return Err(format!("{sql:?}: forbidden statement opened a connection"));
            }
        } else if let Err(e) = &result {
            if e.kind == ExecErrorKind::Forbidden {
                return Err(format!("{sql:?}: allowed statement was refused: {}", e.message));
            }
        }
        if file_digest(db) != before {
            return Err(format!("{sql:?}: database file changed"));
        }
    }
    if dir_listing(db.parent().unwrap()) != listing {
        return Err("files appeared next to the database".into());
    }
    Ok(format!(
        "{} adversarial statements, {forbidden} forbidden with zero connections, digest unchanged",
        ADVERSARIAL.len()
    ))
}

// --------------------------------------------------------------- focused

pub struct FocusFixture {
    pub name: &'static str,
    pub tables: &'static [&'static str],
    pub question: &'static str,
    pub proposals: &'static [(&'static str, &'static [(&'static str, &'static str)])],
    pub corrections: &'static [(&'static str, &'static [(&'static str, &'static str)])],
    pub expected: &'static [(&'static str, &'static [&'static str])],
}

pub const FOCUS_FIXTURES: [FocusFixture; 5] = [
    FocusFixture {
        name: "sat scores across two tables",
        tables: &["satscores", "schools"],
        question: "Which city is home to the Alameda county school with the highest total SAT Scores?",
        proposals: &[
            ("SAT Scores", &[("satscores", "AvgScrRead"), ("satscores", "AvgScrMath"), ("satscores", "AvgScrWrite")]),
            ("Alameda county", &[("satscores", "cname")]),
            ("city", &[("schools", "City")]),
        ],
        corrections: &[],
        expected: &[
            ("satscores", &["cds", "cname", "AvgScrRead", "AvgScrMath", "AvgScrWrite"]),
            ("schools", &["CDSCode", "City"]),
        ],
    },
    FocusFixture {
        name: "single table",
        tables: &["schools"],
        question: "How many charter schools are in Fresno?",
        proposals: &[("charter schools", &[("schools", "Charter")]), ("Fresno", &[("schools", "County")])],
        corrections: &[],
        expected: &[("schools", &["CDSCode", "County", "Charter"])],
    },
    FocusFixture {
        name: "one contributing table of three, with a correction",
        tables: &["frpm", "schools", "satscores"],
        question: "What is the enrollment and the number of free meals?",
        proposals: &[("enrollment", &[("frpm", "Enrollment")]), ("free meals", &[("frpm", "Enrollment")])],
        corrections: &[("m2", &[("frpm", "FreeMealCount")])],
        expected: &[("frpm", &["CDSCode", "Enrollment", "FreeMealCount"])],
    },
    FocusFixture {
        name: "three contributing tables joined by foreign keys",
        tables: &["schools", "frpm", "satscores"],
        question: "Compare enrollment with SAT test takers for each school name",
        proposals: &[
            ("enrollment", &[("frpm", "Enrollment")]),
            ("test takers", &[("satscores", "NumTstTakr")]),
            ("school name", &[("schools", "School")]),
        ],
        corrections: &[],
        expected: &[
            ("schools", &["CDSCode", "School"]),
            ("frpm", &["CDSCode", "Enrollment"]),
            ("satscores", &["cds", "NumTstTakr"]),
        ],
    },
    FocusFixture {
        name: "no mappings keeps the selection",
        tables: &["frpm"],
        question: "Show me everything",
        proposals: &[],
        corrections: &[],
        expected: &[("frpm", &["CDSCode", "Academic Year", "County Name", "School Name", "Enrollment", "FreeMealCount"])],
    },
];

pub fn check_focused(db: &Path) -> CheckResult {
    let schema = Arc::new(introspect_database(db).map_err(|e| e.to_string())?);
    for fx in &FOCUS_FIXTURES {
        let selected = select_tables(&schema, fx.tables).map_err(|e| e.to_string())?;
        let proposals: Vec<LinkProposal> = fx
            .proposals
            .iter()
            .map(|(surface, fields)| LinkProposal {
                surface: surface.to_string(),
                fields: fields
                    .iter()
                    .map(|(t, c)| ProposedField { table: t.to_string(), column: c.to_string() })
                    .collect(),
            })
            .collect();
        let mut linking = build_linking(fx.question, "", &proposals, &selected).result;
        for (mention, fields) in fx.corrections {
            let fields: Vec<FieldRef> = fields.iter().map(|(t, c)| FieldRef::new(*t, *c)).collect();
            linking = apply_correction(&linking, mention, &fields, &selected).map_err(|e| e.to_string())?;
        }
        let focused = derive_focused_schema(&confirm(&linking), &selected).map_err(|e| e.to_string())?;
        let got: Vec<SubsetTable> = focused.spec();
        let want: Vec<SubsetTable> = fx
            .expected
            .iter()
            .map(|(t, cols)| SubsetTable { table: t.to_string(), columns: cols.iter().map(|c| c.to_string()).collect() })
            .collect();
        let as_set = |spec: &[SubsetTable]| -> BTreeSet<(String, String)> {
            spec.iter().flat_map(|t| t.columns.iter().map(move |c| (t.table.clone(), c.clone()))).collect()
        };
        if as_set(&got) != as_set(&want) || got != want {
            return Err(format!("{}: got {got:?}", fx.name));
        }
    }
    Ok(format!("{} linking fixtures match the hand-computed retention sets", FOCUS_FIXTURES.len()))
}

// ------------------------------------------------------------ persistence

type Action = Box<dyn Fn(&SessionEngine, &Session) -> Result<Session, Failure>>;

fn random_action(rng: &mut StdRng, session: &Session) -> (String, Action) {
    let step_ids: Vec<String> = session
        .plan
        .as_ref()
        .map(|p| p.steps().iter().map(|s| s.id.clone()).collect())
        .unwrap_or_else(|| vec!["s1".to_string()]);
    let step = step_ids.choose(rng).unwrap().clone();
    let ok = |r: Result<(Session, _), Failure>| r.map(|(s, _)| s);
    // Mostly actions valid in the current state, with a share of arbitrary
    // ones to exercise the rejection paths.
    let choice = if rng.gen_bool(0.2) {
        rng.gen_range(0..10)
    } else {
        match session.state {
            SessionState::TableSelection | SessionState::QuestionEntry => 0,
            SessionState::IntentReview => [0, 1, 2, 2].choose(rng).copied().unwrap(),
            SessionState::PlanReview => [3, 3, 3, 4, 5, 6, 6, 7, 8].choose(rng).copied().unwrap(),
            SessionState::Finalized => [9, 0].choose(rng).copied().unwrap(),
        }
    };
    match choice {
        0 => {
            let q = QUESTIONS.choose(rng).unwrap().to_string();
            (format!("submit {q:?}"), Box::new(move |e, s| ok(e.submit_question(s, &q))))
        }
        1 => {
            let col = ["City", "County", "School", "Nope"].choose(rng).unwrap().to_string();
            (
                format!("correct m1 -> {col}"),
                Box::new(move |e, s| ok(e.correct_mapping(s, "m1", &[FieldRef::new("schools", &col)]))),
            )
        }
        2 => ("confirm".into(), Box::new(move |e, s| ok(e.confirm_intent(s)))),
        3 | 4 => (format!("execute {step}"), Box::new(move |e, s| ok(e.step_action(s, &step, &StepAction::Execute)))),
        5 => {
            let sql = rng.gen_bool(0.5).then(|| "SELECT 'edited'".to_string());
            let action = StepAction::Edit { explanation: Some("edited".into()), sql };
            (format!("edit {step}"), Box::new(move |e, s| ok(e.step_action(s, &step, &action))))
        }
        6 => {
            let failed = session
                .plan
                .as_ref()
                .and_then(|p| p.steps().iter().find(|s| s.status == StepStatus::ExecutedError))
                .map(|s| s.id.clone());
            let step = failed.unwrap_or(step);
            (format!("refine {step}"), Box::new(move |e, s| ok(e.step_action(s, &step, &StepAction::Refine))))
        }
        7 => (format!("regenerate {step}"), Box::new(move |e, s| ok(e.step_action(s, &step, &StepAction::Regenerate)))),
        8 => ("finalize".into(), Box::new(move |e, s| ok(e.finalize(s)))),
        _ => ("reopen".into(), Box::new(move |e, s| ok(e.reopen(s)))),
    }
}

pub fn check_persistence(db: &Path, sequences: usize, seed: u64) -> CheckResult {
    let store_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = SessionStore::open(store_dir.path()).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut actions = 0;
    let mut events = 0;
    let mut kinds = std::collections::BTreeMap::<&'static str, usize>::new();
    for seq in 0..sequences {
        let provider = Arc::new(SyntheticProvider::new(seed ^ seq as u64, 0.15));
        let engine = SessionEngine::new(provider, ExecLimits::new(20, Duration::from_secs(5)).unwrap());
        let mut session = engine.create_session(db, &["schools"], "K").map_err(|e| e.to_string())?;
        let mut log = Vec::new();
        for _ in 0..rng.gen_range(3..=24) {
            let (label, action) = random_action(&mut rng, &session);
            log.push(label);
            actions += 1;
            match action(&engine, &session) {
                Ok(next) => session = next,
                Err(Failure { session: Some(next), .. }) => session = *next,
                Err(Failure { session: None, .. }) => {}
            }
            let fail = |what: &str| format!("sequence {seq} after {log:?}: {what}");
            session.check_invariants().map_err(|e| fail(&e))?;
            store.save(&session).map_err(|e| fail(&e.to_string()))?;
            let loaded = store.load(&session.id).map_err(|e| fail(&e.to_string()))?;
            if loaded != session {
                return Err(fail("loaded session differs"));
            }
            let replayed = replay(&session.id, Arc::clone(&session.schema), &session.events)
                .map_err(|e| fail(&e.to_string()))?;
            if replayed != session {
                return Err(fail("replayed session differs"));
            }
        }
        events += session.events.len();
        for e in &session.events {
            *kinds.entry(e.body.kind()).or_default() += 1;
        }
    }
    let required = ["linked", "plan_generated", "step_executed", "step_edited", "step_refined", "regenerated", "finalized", "reopened", "action_failed"];
    if let Some(missing) = required.iter().find(|k| !kinds.contains_key(*k)) {
        return Err(format!("no sequence produced a {missing} event: {kinds:?}"));
    }
    Ok(format!("{sequences} sequences, {actions} actions, {events} events over {} kinds: 0 divergences", kinds.len()))
}

// ------------------------------------------------------------- structured

fn proposal(surface: &str, fields: &[(&str, &str)]) -> LinkProposal {
    LinkProposal {
        surface: surface.into(),
        fields: fields.iter().map(|(t, c)| ProposedField { table: t.to_string(), column: c.to_string() }).collect(),
    }
}

fn draft(id: &str, sql: &str, deps: Option<&[&str]>) -> StepDraft {
    StepDraft {
        id: id.into(),
        explanation: format!("explain {id}"),
        sql: sql.into(),
        depends_on: deps.map(|d| d.iter().map(|s| s.to_string()).collect()),
    }
}

pub fn structured_fixtures() -> Vec<(&'static str, OutputKind, Structured)> {
    let city = || vec![proposal("city", &[("schools", "City")])];
    let two = || Structured::Plan(PlanDraft { steps: vec![draft("s1", "SELECT 1", Some(&[])), draft("s2", "SELECT 2", Some(&["s1"]))] });
    vec![
        (r#"[{"surface": "city", "fields": [{"table": "schools", "column": "City"}]}]"#, OutputKind::LinkingJson, Structured::Linking(city())),
        ("Here you go:\n```json\n[{\"surface\": \"city\", \"fields\": [{\"table\": \"schools\", \"column\": \"City\"}]}]\n```\nAnything else?", OutputKind::LinkingJson, Structured::Linking(city())),
        ("```\n[{\"surface\": \"city\", \"fields\": [{\"table\": \"schools\", \"column\": \"City\"}]}]\n```", OutputKind::LinkingJson, Structured::Linking(city())),
        ("[{\"surface\": \"city\", \"fields\": [{\"table\": \"schools\", \"column\": \"City\"}]}]\nHope this helps!", OutputKind::LinkingJson, Structured::Linking(city())),
        ("Note {\"confidence\": 0.9} and the mapping [{\"surface\": \"city\", \"fields\": [{\"table\": \"schools\", \"column\": \"City\"}]}].", OutputKind::LinkingJson, Structured::Linking(city())),
        ("Nothing in the question refers to the schema: []", OutputKind::LinkingJson, Structured::Linking(vec![])),
        (r#"Mapping: [{"surface": "rank [1]", "fields": [{"table": "t", "column": "a]b"}]}]"#, OutputKind::LinkingJson, Structured::Linking(vec![proposal("rank [1]", &[("t", "a]b")])])),
        (r#"{"steps": [{"id": "s1", "explanation": "explain s1", "sql": "SELECT 1", "depends_on": []}, {"id": "s2", "explanation": "explain s2", "sql": "SELECT 2", "depends_on": ["s1"]}]}"#, OutputKind::PlanJson, two()),
        ("I split it in two.\n\n```json\n{\"steps\": [{\"id\": \"s1\", \"explanation\": \"explain s1\", \"sql\": \"SELECT 1\", \"depends_on\": []}, {\"id\": \"s2\", \"explanation\": \"explain s2\", \"sql\": \"SELECT 2\", \"depends_on\": [\"s1\"]}]}\n```", OutputKind::PlanJson, two()),
        (r#"{"steps": [{"id": 1, "explanation": "explain 1", "sql": "SELECT 1", "depends_on": []}, {"id": 2, "explanation": "explain 2", "sql": "SELECT 2", "depends_on": [1]}]}"#, OutputKind::PlanJson, Structured::Plan(PlanDraft { steps: vec![draft("1", "SELECT 1", Some(&[])), draft("2", "SELECT 2", Some(&["1"]))] })),
        (r#"{"steps": [{"id": "s1", "explanation": "explain s1", "sql": "SELECT 1"}]}"#, OutputKind::PlanJson, Structured::Plan(PlanDraft { steps: vec![draft("s1", "SELECT 1", None)] })),
        ("Format example:\n```json\n{\"note\": \"example only\"}\n```\nPlan:\n```json\n{\"steps\": [{\"id\": \"s1\", \"explanation\": \"explain s1\", \"sql\": \"SELECT 1\", \"depends_on\": []}, {\"id\": \"s2\", \"explanation\": \"explain s2\", \"sql\": \"SELECT 2\", \"depends_on\": [\"s1\"]}]}\n```", OutputKind::PlanJson, two()),
        ("Think of it {like this}. {\"steps\": [{\"id\": \"s1\", \"explanation\": \"explain s1\", \"sql\": \"SELECT 1\", \"depends_on\": []}, {\"id\": \"s2\", \"explanation\": \"explain s2\", \"sql\": \"SELECT 2\", \"depends_on\": [\"s1\"]}]}", OutputKind::PlanJson, two()),
        (r#"{"steps": [{"id": "s1", "explanation": "explain s1", "sql": "SELECT '}' AS x", "depends_on": []}]}"#, OutputKind::PlanJson, Structured::Plan(PlanDraft { steps: vec![draft("s1", "SELECT '}' AS x", Some(&[]))] })),
        ("SELECT 1", OutputKind::SqlOnly, Structured::Sql("SELECT 1".into())),
        ("```sql\nSELECT a FROM t;\n```", OutputKind::SqlOnly, Structured::Sql("SELECT a FROM t".into())),
        ("Here is the query:\n\nSELECT a\nFROM t\n\nThis returns a.", OutputKind::SqlOnly, Structured::Sql("SELECT a\nFROM t".into())),
        ("The fixed query is SELECT a FROM t; it works.", OutputKind::SqlOnly, Structured::Sql("SELECT a FROM t".into())),
        ("WITH x AS (SELECT 1) SELECT * FROM x;", OutputKind::SqlOnly, Structured::Sql("WITH x AS (SELECT 1) SELECT * FROM x".into())),
        ("```\nselect ';' from t;\n```", OutputKind::SqlOnly, Structured::Sql("select ';' from t".into())),
    ]
}

/// Replies with a fixed sequence and counts calls.
struct SequenceProvider {
    replies: Vec<&'static str>,
    calls: AtomicUsize,
}

impl LlmProvider for SequenceProvider {
    fn label(&self) -> &str {
        "sequence"
    }

    fn complete(&self, _: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        let text = self.replies.get(i).copied().unwrap_or("").to_string();
        Ok(CompletionResult { text, provider_label: "sequence".into(), latency: Duration::ZERO })
    }
}

fn repair_run(replies: Vec<&'static str>) -> (Result<Structured, RepairError<LlmError>>, usize) {
    let provider = SequenceProvider { replies, calls: AtomicUsize::new(0) };
    let request = CompletionRequest::new(
        querytrail_core::llm_gateway::Purpose::Decompose,
        vec![ChatMessage::user("plan please")],
    )
    .unwrap();
    let out = complete_with_repair(&provider, &request, |t| parse_structured(t, OutputKind::PlanJson));
    (out, provider.calls.load(Ordering::SeqCst))
}

pub fn check_structured() -> CheckResult {
    let fixtures = structured_fixtures();
    for (i, (text, kind, want)) in fixtures.iter().enumerate() {
        match parse_structured(text, *kind) {
            Ok(got) if &got == want => {}
            other => return Err(format!("fixture {}: got {other:?}", i + 1)),
        }
    }
    let malformed: [&'static str; 3] = [
        "I could not work out a plan.",
        "```json\n[{\"id\": \"s1\"}]\n```",
        "{\"steps\": [{\"id\": \"s1\", \"explanation\": \"cut off",
    ];
    for bad in malformed {
        let (out, calls) = repair_run(vec![bad, bad, bad]);
        if calls != 2 {
            return Err(format!("{bad:?}: {calls} calls, expected 2"));
        }
        if !matches!(out, Err(RepairError::Rejected(LlmError::MalformedOutput(_)))) {
            return Err(format!("{bad:?}: expected a malformed-output error, got {out:?}"));
        }
    }
    let good = r#"{"steps": [{"id": "s1", "explanation": "e", "sql": "SELECT 1"}]}"#;
    let (out, calls) = repair_run(vec![malformed[0], good]);
    if calls != 2 || out.is_err() {
        return Err(format!("repair that succeeds: {calls} calls, {out:?}"));
    }
    let (out, calls) = repair_run(vec![good]);
    if calls != 1 || out.is_err() {
        return Err(format!("well-formed reply: {calls} calls, {out:?}"));
    }
    Ok(format!(
        "{} fixtures recovered; {} malformed replies each got exactly one repair retry then a clean error",
        fixtures.len(),
        malformed.len()
    ))
}
