//! SQLite schema introspection, table selection, keyword filtering and the
//! line-oriented schema rendering used inside prompts.
//!
//! Identifiers are looked up case-insensitively but always displayed with the
//! casing recorded in the database catalog.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rusqlite::{types::ValueRef, Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of distinct sample values kept per column.
pub const DEFAULT_SAMPLE_LIMIT: usize = 3;

/// Rows examined per column when collecting samples.
const SAMPLE_SCAN_ROWS: usize = 1000;

/// Sample strings longer than this are cut for display.
const SAMPLE_MAX_CHARS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("database file not found: {0}")]
    FileNotFound(String),
    #[error("not a readable SQLite database: {0}")]
    NotADatabase(String),
    #[error("schema introspection failed: {0}")]
    IntrospectionFailed(String),
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("unknown column: {table}.{column}")]
    UnknownColumn { table: String, column: String },
    #[error("table selection is empty")]
    EmptySelection,
    #[error("table {0} appears more than once")]
    DuplicateTable(String),
    #[error("column {table}.{column} appears more than once")]
    DuplicateColumn { table: String, column: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub declared_type: String,
    pub is_primary_key: bool,
    pub is_nullable: bool,
    pub sample_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKeyRef {
    pub local_column: String,
    pub target_table: String,
    pub target_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub foreign_keys: Vec<ForeignKeyRef>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn primary_key_columns(&self) -> impl Iterator<Item = &ColumnDef> {
        self.columns.iter().filter(|c| c.is_primary_key)
    }
}

/// The full schema of one database file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSnapshot {
    pub database_label: String,
    pub tables: Vec<TableDef>,
    pub captured_at: DateTime<Utc>,
}

impl SchemaSnapshot {
    /// Builds a snapshot from already-assembled tables, enforcing the catalog
    /// invariants (distinct names, foreign keys resolve on both ends).
    pub fn new(
        database_label: impl Into<String>,
        tables: Vec<TableDef>,
        captured_at: DateTime<Utc>,
    ) -> Result<Self, SchemaError> {
        let snapshot = SchemaSnapshot {
            database_label: database_label.into(),
            tables,
            captured_at,
        };
        snapshot.validate()?;
        Ok(snapshot)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let bad = |msg: String| Err(SchemaError::IntrospectionFailed(msg));
        for (i, table) in self.tables.iter().enumerate() {
            if table.name.is_empty() {
                return bad("table with empty name".into());
            }
            if self.tables[..i]
                .iter()
                .any(|t| t.name.eq_ignore_ascii_case(&table.name))
            {
                return Err(SchemaError::DuplicateTable(table.name.clone()));
            }
            for (j, col) in table.columns.iter().enumerate() {
                if col.name.is_empty() {
                    return bad(format!("column with empty name in {}", table.name));
                }
                if table.columns[..j]
                    .iter()
                    .any(|c| c.name.eq_ignore_ascii_case(&col.name))
                {
                    return Err(SchemaError::DuplicateColumn {
                        table: table.name.clone(),
                        column: col.name.clone(),
                    });
                }
            }
            for fk in &table.foreign_keys {
                if fk.local_column.is_empty()
                    || fk.target_table.is_empty()
                    || fk.target_column.is_empty()
                {
                    return bad(format!("foreign key with empty identifier in {}", table.name));
                }
                if table.column(&fk.local_column).is_none() {
                    return bad(format!(
                        "foreign key on {}.{} names a missing local column",
                        table.name, fk.local_column
                    ));
                }
                let Some(target) = self.table(&fk.target_table) else {
                    return bad(format!(
                        "foreign key {}.{} references missing table {}",
                        table.name, fk.local_column, fk.target_table
                    ));
                };
                if target.column(&fk.target_column).is_none() {
                    return bad(format!(
                        "foreign key {}.{} references missing column {}.{}",
                        table.name, fk.local_column, fk.target_table, fk.target_column
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.iter().map(|t| t.name.clone()).collect()
    }
}

/// Serializable description of a subset: table names with retained columns.
pub type SubsetSpec = Vec<SubsetTable>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetTable {
    pub table: String,
    pub columns: Vec<String>,
}

/// A validated selection of tables and columns from a [`SchemaSnapshot`].
///
/// The only way to build one is [`SchemaSubset::new`] (or the operations that
/// call it), so every value refers to tables and columns that exist in its
/// source snapshot, with canonical casing and no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaSubset {
    source: Arc<SchemaSnapshot>,
    tables: Vec<SubsetTable>,
}

impl SchemaSubset {
    pub fn new(source: Arc<SchemaSnapshot>, spec: SubsetSpec) -> Result<Self, SchemaError> {
        let mut tables: Vec<SubsetTable> = Vec::with_capacity(spec.len());
        for entry in spec {
            let table = source
                .table(&entry.table)
                .ok_or_else(|| SchemaError::UnknownTable(entry.table.clone()))?;
            if tables.iter().any(|t| t.table == table.name) {
                return Err(SchemaError::DuplicateTable(table.name.clone()));
            }
            let mut columns: Vec<String> = Vec::with_capacity(entry.columns.len());
            for col in &entry.columns {
                let def = table.column(col).ok_or_else(|| SchemaError::UnknownColumn {
                    table: table.name.clone(),
                    column: col.clone(),
                })?;
                if columns.contains(&def.name) {
                    return Err(SchemaError::DuplicateColumn {
                        table: table.name.clone(),
                        column: def.name.clone(),
                    });
                }
                columns.push(def.name.clone());
            }
            tables.push(SubsetTable {
                table: table.name.clone(),
                columns,
            });
        }
        Ok(SchemaSubset { source, tables })
    }

    pub fn source(&self) -> &Arc<SchemaSnapshot> {
        &self.source
    }

    pub fn tables(&self) -> &[SubsetTable] {
        &self.tables
    }

    pub fn spec(&self) -> SubsetSpec {
        self.tables.clone()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Canonical `(table, column)` names if the pair is part of this subset.
    pub fn resolve(&self, table: &str, column: &str) -> Option<(&str, &str)> {
        let t = self
            .tables
            .iter()
            .find(|t| t.table.eq_ignore_ascii_case(table))?;
        let c = t.columns.iter().find(|c| c.eq_ignore_ascii_case(column))?;
        Some((&t.table, c))
    }

    pub fn contains_table(&self, table: &str) -> bool {
        self.tables.iter().any(|t| t.table.eq_ignore_ascii_case(table))
    }
}

/// Opens `db_path` read-only and reads every user table.
pub fn introspect_database(db_path: &Path) -> Result<SchemaSnapshot, SchemaError> {
    introspect_database_with(db_path, DEFAULT_SAMPLE_LIMIT)
}

pub fn introspect_database_with(
    db_path: &Path,
    sample_limit: usize,
) -> Result<SchemaSnapshot, SchemaError> {
    if !db_path.is_file() {
        return Err(SchemaError::FileNotFound(db_path.display().to_string()));
    }
    let conn = Connection::open_with_flags(
        db_path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| SchemaError::NotADatabase(e.to_string()))?;

    let table_names: Vec<String> = {
        let mut stmt = conn
            .prepare(
                "SELECT name FROM sqlite_master \
                 WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' \
                 ORDER BY rowid",
            )
            .map_err(classify_open_error)?;
        let rows = stmt
            .query_map([], |r| r.get::<_, String>(0))
            .map_err(classify_open_error)?;
        rows.collect::<Result<_, _>>().map_err(classify_open_error)?
    };

    let mut tables = Vec::with_capacity(table_names.len());
    for name in &table_names {
        tables.push(read_table(&conn, name, sample_limit)?);
    }
    resolve_implicit_fk_targets(&mut tables);

    let label = db_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| db_path.display().to_string());
    SchemaSnapshot::new(label, tables, Utc::now())
}

fn classify_open_error(e: rusqlite::Error) -> SchemaError {
    match e.sqlite_error_code() {
        Some(rusqlite::ErrorCode::NotADatabase) => SchemaError::NotADatabase(e.to_string()),
        _ => SchemaError::IntrospectionFailed(e.to_string()),
    }
}

fn introspection(e: rusqlite::Error) -> SchemaError {
    SchemaError::IntrospectionFailed(e.to_string())
}

pub(crate) fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn read_table(conn: &Connection, table: &str, sample_limit: usize) -> Result<TableDef, SchemaError> {
    let mut columns = Vec::new();
    {
        let mut stmt = conn
            .prepare("SELECT name, type, \"notnull\", pk FROM pragma_table_info(?1) ORDER BY cid")
            .map_err(introspection)?;
        let rows = stmt
            .query_map([table], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, i64>(2)?,
                    r.get::<_, i64>(3)?,
                ))
            })
            .map_err(introspection)?;
        for row in rows {
            let (name, declared_type, not_null, pk) = row.map_err(introspection)?;
            columns.push(ColumnDef {
                name,
                declared_type,
                is_primary_key: pk > 0,
                is_nullable: not_null == 0 && pk == 0,
                sample_values: Vec::new(),
            });
        }
    }
    for col in &mut columns {
        col.sample_values = sample_values(conn, table, &col.name, sample_limit)?;
    }

    let mut foreign_keys = Vec::new();
    {
        let mut stmt = conn
            .prepare("SELECT \"table\", \"from\", \"to\" FROM pragma_foreign_key_list(?1) ORDER BY id, seq")
            .map_err(introspection)?;
        let rows = stmt
            .query_map([table], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, Option<String>>(2)?,
                ))
            })
            .map_err(introspection)?;
        for row in rows {
            let (target_table, local_column, target_column) = row.map_err(introspection)?;
            foreign_keys.push(ForeignKeyRef {
                local_column,
                target_table,
                // Empty marks an implicit reference to the target's primary key.
                target_column: target_column.unwrap_or_default(),
            });
        }
    }
    Ok(TableDef {
        name: table.to_string(),
        columns,
        foreign_keys,
    })
}

/// `REFERENCES t` without a column list points at t's primary key.
fn resolve_implicit_fk_targets(tables: &mut [TableDef]) {
    let pks: Vec<(String, Option<String>)> = tables
        .iter()
        .map(|t| {
            let mut pk = t.primary_key_columns();
            let first = pk.next().map(|c| c.name.clone());
            (t.name.clone(), first)
        })
        .collect();
    for table in tables.iter_mut() {
        for fk in &mut table.foreign_keys {
            if fk.target_column.is_empty() {
                if let Some((_, Some(pk))) = pks
                    .iter()
                    .find(|(name, _)| name.eq_ignore_ascii_case(&fk.target_table))
                {
                    fk.target_column = pk.clone();
                }
            }
        }
    }
}

fn sample_values(
    conn: &Connection,
    table: &str,
    column: &str,
    limit: usize,
) -> Result<Vec<String>, SchemaError> {
    if limit == 0 {
        return Ok(Vec::new());
    }
    let col = quote_ident(column);
    let sql = format!(
        "SELECT DISTINCT v FROM (SELECT {col} AS v FROM {tbl} WHERE {col} IS NOT NULL LIMIT {scan}) LIMIT {limit}",
        tbl = quote_ident(table),
        scan = SAMPLE_SCAN_ROWS,
    );
    let mut stmt = conn.prepare(&sql).map_err(introspection)?;
    let mut rows = stmt.query([]).map_err(introspection)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next().map_err(introspection)? {
        let value = row.get_ref(0).map_err(introspection)?;
        out.push(truncate_display(display_value(value)));
    }
    Ok(out)
}

/// Text form of a cell value as shown to users and in prompts.
pub(crate) fn display_value(value: ValueRef<'_>) -> String {
    match value {
        ValueRef::Null => "NULL".to_string(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => f.to_string(),
        ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
        ValueRef::Blob(b) => format!("<blob {} bytes>", b.len()),
    }
}

fn truncate_display(s: String) -> String {
    if s.chars().count() <= SAMPLE_MAX_CHARS {
        return s;
    }
    let mut cut: String = s.chars().take(SAMPLE_MAX_CHARS).collect();
    cut.push_str("...");
    cut
}

/// Subset made of the named tables with every column retained, in request order.
pub fn select_tables(
    snapshot: &Arc<SchemaSnapshot>,
    names: &[impl AsRef<str>],
) -> Result<SchemaSubset, SchemaError> {
    if names.is_empty() {
        return Err(SchemaError::EmptySelection);
    }
    let mut spec = Vec::with_capacity(names.len());
    for name in names {
        let table = snapshot
            .table(name.as_ref())
            .ok_or_else(|| SchemaError::UnknownTable(name.as_ref().to_string()))?;
        spec.push(SubsetTable {
            table: table.name.clone(),
            columns: table.columns.iter().map(|c| c.name.clone()).collect(),
        });
    }
    SchemaSubset::new(Arc::clone(snapshot), spec)
}

/// Case-insensitive substring filter over table and column names.
///
/// A table whose name matches is returned with all of its columns; otherwise
/// only its matching columns are returned. Tables with nothing matching are
/// omitted.
pub fn filter_keyword(snapshot: &SchemaSnapshot, keyword: &str) -> Vec<(String, Vec<String>)> {
    let needle = keyword.to_lowercase();
    let matches = |s: &str| s.to_lowercase().contains(&needle);
    snapshot
        .tables
        .iter()
        .filter_map(|t| {
            let cols: Vec<String> = if matches(&t.name) {
                t.columns.iter().map(|c| c.name.clone()).collect()
            } else {
                t.columns
                    .iter()
                    .filter(|c| matches(&c.name))
                    .map(|c| c.name.clone())
                    .collect()
            };
            (matches(&t.name) || !cols.is_empty()).then(|| (t.name.clone(), cols))
        })
        .collect()
}

fn display_ident(name: &str) -> String {
    let simple = name
        .chars()
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_alphanumeric() || c == '_');
    if simple {
        name.to_string()
    } else {
        quote_ident(name)
    }
}

/// Deterministic prompt text for a subset.
///
/// ```text
/// TABLE satscores
///   cds TEXT pk -> schools.CDSCode -- samples: 01100170112607, 01611190130229
///   AvgScrMath INTEGER -- samples: 577, 479, 599
/// ```
pub fn render_schema_prompt(subset: &SchemaSubset) -> String {
    let mut out = String::new();
    for entry in subset.tables() {
        // Subset validation guarantees the lookups below.
        let table = subset
            .source()
            .table(&entry.table)
            .expect("subset table exists in source");
        let _ = writeln!(out, "TABLE {}", display_ident(&table.name));
        for col_name in &entry.columns {
            let col = table.column(col_name).expect("subset column exists in source");
            let _ = write!(out, "  {}", display_ident(&col.name));
            if !col.declared_type.is_empty() {
                let _ = write!(out, " {}", col.declared_type);
            }
            if col.is_primary_key {
                out.push_str(" pk");
            }
            for fk in table
                .foreign_keys
                .iter()
                .filter(|fk| fk.local_column.eq_ignore_ascii_case(&col.name))
            {
                let _ = write!(
                    out,
                    " -> {}.{}",
                    display_ident(&fk.target_table),
                    display_ident(&fk.target_column)
                );
            }
            if !col.sample_values.is_empty() {
                let _ = write!(out, " -- samples: {}", col.sample_values.join(", "));
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationshipEdge {
    pub source_table: String,
    pub target_table: String,
    pub source_column: String,
    pub target_column: String,
}

/// One edge per declared foreign key, in table order then key order.
pub fn relationship_edges(snapshot: &SchemaSnapshot) -> Vec<RelationshipEdge> {
    snapshot
        .tables
        .iter()
        .flat_map(|t| {
            t.foreign_keys.iter().map(move |fk| RelationshipEdge {
                source_table: t.name.clone(),
                target_table: fk.target_table.clone(),
                source_column: fk.local_column.clone(),
                target_column: fk.target_column.clone(),
            })
        })
        .collect()
}
