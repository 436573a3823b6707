//! Sandboxed execution of step SQL against the session database.
//!
//! Two independent guards keep the database untouched: a keyword classifier
//! that rejects anything but read-only statements before a connection is
//! opened, and a read-only, `query_only` connection for whatever passes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rusqlite::{Connection, ErrorCode, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::schema_catalog::display_value;
use crate::sql_lexer::{tokenize, Token, TokenKind};

/// Rows counted (not materialized) past the preview cap.
const COUNT_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecLimits {
    pub max_preview_rows: usize,
    #[serde(with = "millis")]
    pub timeout: Duration,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits { max_preview_rows: 100, timeout: Duration::from_secs(5) }
    }
}

impl ExecLimits {
    /// `None` unless both limits are strictly positive.
    pub fn new(max_preview_rows: usize, timeout: Duration) -> Option<ExecLimits> {
        (max_preview_rows > 0 && !timeout.is_zero()).then_some(ExecLimits { max_preview_rows, timeout })
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultPreview {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub total_rows_seen: usize,
    pub truncated: bool,
}

impl ResultPreview {
    pub fn empty() -> ResultPreview {
        ResultPreview { columns: Vec::new(), rows: Vec::new(), total_rows_seen: 0, truncated: false }
    }

    pub fn is_well_formed(&self) -> bool {
        self.rows.iter().all(|r| r.len() == self.columns.len())
            && self.truncated == (self.total_rows_seen > self.rows.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecErrorKind {
    Syntax,
    Runtime,
    Timeout,
    Forbidden,
}

impl fmt::Display for ExecErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecErrorKind::Syntax => "syntax",
            ExecErrorKind::Runtime => "runtime",
            ExecErrorKind::Timeout => "timeout",
            ExecErrorKind::Forbidden => "forbidden",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind} error: {message}")]
pub struct ExecError {
    pub kind: ExecErrorKind,
    pub message: String,
    pub sql: String,
}

impl ExecError {
    fn new(kind: ExecErrorKind, message: impl Into<String>, sql: &str) -> ExecError {
        let mut message = message.into();
        if message.trim().is_empty() {
            message = format!("{kind} error");
        }
        ExecError { kind, message, sql: sql.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classification {
    Allowed,
    Forbidden(String),
    /// Leading token is not a statement keyword at all. Such input can only
    /// fail to parse, so it is handed to the engine for a syntax diagnosis
    /// but never stepped.
    Unrecognized(String),
}

impl Classification {
    pub fn is_allowed(&self) -> bool {
        matches!(self, Classification::Allowed)
    }

    pub fn is_forbidden(&self) -> bool {
        matches!(self, Classification::Forbidden(_))
    }
}

const READ_VERBS: [&str; 2] = ["SELECT", "VALUES"];
const WRITE_VERBS: [&str; 4] = ["INSERT", "UPDATE", "DELETE", "REPLACE"];
/// Every other keyword that can open an SQLite statement.
const OTHER_VERBS: [&str; 15] = [
    "ALTER", "ANALYZE", "ATTACH", "BEGIN", "COMMIT", "CREATE", "DETACH", "DROP", "END", "PRAGMA",
    "REINDEX", "RELEASE", "ROLLBACK", "SAVEPOINT", "VACUUM",
];

pub fn classify_statement(sql: &str) -> Classification {
    let chars: Vec<char> = sql.chars().collect();
    let tokens: Vec<Token> = tokenize(&chars)
        .into_iter()
        .filter(|t| !t.kind.is_trivia())
        .collect();
    if tokens.is_empty() {
        return Classification::Forbidden("empty statement".into());
    }
    if let Some(i) = tokens.iter().position(|t| t.kind == TokenKind::Symbol(';')) {
        if i + 1 < tokens.len() {
            return Classification::Forbidden("multiple statements".into());
        }
    }
    classify_tokens(&chars, &tokens)
}

fn upper_word(chars: &[char], t: &Token) -> Option<String> {
    (t.kind == TokenKind::Word).then(|| t.text(chars).to_ascii_uppercase())
}

fn classify_tokens(chars: &[char], tokens: &[Token]) -> Classification {
    let Some(first) = tokens.first() else {
        return Classification::Forbidden("empty statement".into());
    };
    let Some(verb) = upper_word(chars, first) else {
        return Classification::Unrecognized(first.text(chars));
    };
    match verb.as_str() {
        "SELECT" | "VALUES" => Classification::Allowed,
        "EXPLAIN" => {
            let mut rest = &tokens[1..];
            if rest.first().and_then(|t| upper_word(chars, t)).as_deref() == Some("QUERY")
                && rest.get(1).and_then(|t| upper_word(chars, t)).as_deref() == Some("PLAN")
            {
                rest = &rest[2..];
            }
            classify_tokens(chars, rest)
        }
        "WITH" => {
            // CTE bodies are parenthesized, so the first top-level verb is the
            // main statement.
            let mut depth = 0usize;
            for t in &tokens[1..] {
                match t.kind {
                    TokenKind::Symbol('(') => depth += 1,
                    TokenKind::Symbol(')') => depth = depth.saturating_sub(1),
                    TokenKind::Word if depth == 0 => {
                        let w = t.text(chars).to_ascii_uppercase();
                        if READ_VERBS.contains(&w.as_str()) {
                            return Classification::Allowed;
                        }
                        if WRITE_VERBS.contains(&w.as_str()) {
                            return Classification::Forbidden(format!("non-read-only verb {w}"));
                        }
                    }
                    _ => {}
                }
            }
            Classification::Forbidden("WITH without a main statement".into())
        }
        v if WRITE_VERBS.contains(&v) || OTHER_VERBS.contains(&v) => {
            Classification::Forbidden(format!("non-read-only verb {verb}"))
        }
        _ => Classification::Unrecognized(verb),
    }
}

/// Runs statements against one database file. Every execution opens its own
/// read-only connection.
#[derive(Debug)]
pub struct SqlExecutor {
    db_path: PathBuf,
    limits: ExecLimits,
    connections_opened: AtomicU64,
}

impl SqlExecutor {
    pub fn new(db_path: impl Into<PathBuf>, limits: ExecLimits) -> SqlExecutor {
        SqlExecutor { db_path: db_path.into(), limits, connections_opened: AtomicU64::new(0) }
    }

    pub fn db_path(&self) -> &Path {
        &self.db_path
    }

    pub fn limits(&self) -> ExecLimits {
        self.limits
    }

    /// Connections opened so far; forbidden statements never open one.
    pub fn connections_opened(&self) -> u64 {
        self.connections_opened.load(Ordering::SeqCst)
    }

    pub fn execute_preview(&self, sql: &str) -> Result<ResultPreview, ExecError> {
        let class = classify_statement(sql);
        if let Classification::Forbidden(reason) = &class {
            return Err(ExecError::new(ExecErrorKind::Forbidden, reason.clone(), sql));
        }
        self.connections_opened.fetch_add(1, Ordering::SeqCst);
        let conn = open_read_only(&self.db_path).map_err(|e| runtime(e, sql))?;
        if let Classification::Unrecognized(word) = class {
            let err = match conn.prepare(sql) {
                Err(e) => e.to_string(),
                Ok(_) => return Err(ExecError::new(ExecErrorKind::Forbidden, format!("unrecognized statement {word}"), sql)),
            };
            let kind = if is_syntax_message(&err) { ExecErrorKind::Syntax } else { ExecErrorKind::Runtime };
            return Err(ExecError::new(kind, err, sql));
        }
        run_with_watchdog(&conn, sql, self.limits)
    }
}

pub fn execute_preview(db_path: &Path, sql: &str, limits: ExecLimits) -> Result<ResultPreview, ExecError> {
    SqlExecutor::new(db_path, limits).execute_preview(sql)
}

fn open_read_only(path: &Path) -> rusqlite::Result<Connection> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )?;
    conn.execute_batch("PRAGMA query_only = ON")?;
    Ok(conn)
}

fn runtime(e: rusqlite::Error, sql: &str) -> ExecError {
    ExecError::new(ExecErrorKind::Runtime, e.to_string(), sql)
}

fn is_syntax_message(msg: &str) -> bool {
    ["syntax error", "incomplete input", "unrecognized token"]
        .iter()
        .any(|m| msg.contains(m))
}

fn is_interrupt(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::OperationInterrupted)
}

fn run_with_watchdog(conn: &Connection, sql: &str, limits: ExecLimits) -> Result<ResultPreview, ExecError> {
    let handle = conn.get_interrupt_handle();
    let fired = Arc::new(AtomicBool::new(false));
    let (done, wait) = mpsc::channel::<()>();
    let watchdog = {
        let fired = Arc::clone(&fired);
        thread::spawn(move || {
            if let Err(mpsc::RecvTimeoutError::Timeout) = wait.recv_timeout(limits.timeout) {
                fired.store(true, Ordering::SeqCst);
                handle.interrupt();
            }
        })
    };
    let started = Instant::now();
    let result = run_query(conn, sql, limits.max_preview_rows);
    let _ = done.send(());
    let _ = watchdog.join();
    match result {
        Err(e) if is_interrupt(&e) || fired.load(Ordering::SeqCst) => Err(ExecError::new(
            ExecErrorKind::Timeout,
            format!("query exceeded {} ms (ran {} ms)", limits.timeout.as_millis(), started.elapsed().as_millis()),
            sql,
        )),
        Err(e) => {
            let msg = e.to_string();
            let kind = if is_syntax_message(&msg) { ExecErrorKind::Syntax } else { ExecErrorKind::Runtime };
            Err(ExecError::new(kind, msg, sql))
        }
        Ok(p) => Ok(p),
    }
}

fn run_query(conn: &Connection, sql: &str, max_rows: usize) -> rusqlite::Result<ResultPreview> {
    let mut stmt = conn.prepare(sql)?;
    let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
    let width = columns.len();
    let mut rows_out = Vec::new();
    let mut seen = 0usize;
    let mut rows = stmt.query([])?;
    while let Some(row) = rows.next()? {
        seen += 1;
        if rows_out.len() < max_rows {
            let mut cells = Vec::with_capacity(width);
            for i in 0..width {
                cells.push(display_value(row.get_ref(i)?));
            }
            rows_out.push(cells);
        }
        if seen >= COUNT_CAP.max(max_rows + 1) {
            break;
        }
    }
    let truncated = seen > rows_out.len();
    Ok(ResultPreview { columns, rows: rows_out, total_rows_seen: seen, truncated })
}
