//! Schema linking: which phrases of the question refer to which columns,
//! human correction of that mapping, and the focused schema derived from it.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_gateway::{
    complete_with_repair, parse_structured, LinkProposal, LlmError, LlmProvider, OutputKind,
    RepairError, Structured,
};
use crate::prompts;
use crate::schema_catalog::{SchemaSubset, SubsetTable};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("schema selection is empty")]
    EmptySubset,
    #[error("unknown mention: {0}")]
    UnknownMention(String),
    #[error("unknown field: {table}.{column}")]
    UnknownField { table: String, column: String },
    #[error("a mapping needs at least one field")]
    EmptyFields,
    #[error("linking has not been confirmed")]
    NotConfirmed,
}

impl From<RepairError<LlmError>> for LinkError {
    fn from(e: RepairError<LlmError>) -> Self {
        match e {
            RepairError::Provider(e) | RepairError::Rejected(e) => LinkError::Llm(e),
        }
    }
}

/// A span of the question, in character (not byte) positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub id: String,
    pub char_start: usize,
    pub char_end: usize,
    pub surface_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldRef {
    pub table: String,
    pub column: String,
}

impl FieldRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        FieldRef { table: table.into(), column: column.into() }
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingOrigin {
    Model,
    UserCorrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub mention: Mention,
    pub fields: Vec<FieldRef>,
    pub origin: MappingOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkingResult {
    pub question: String,
    pub knowledge: String,
    /// Ordered by mention position.
    pub mappings: Vec<Mapping>,
    pub confirmed: bool,
}

impl LinkingResult {
    pub fn mapping(&self, mention_id: &str) -> Option<&Mapping> {
        self.mappings.iter().find(|m| m.mention.id == mention_id)
    }

    /// Checks the span invariants against `question`.
    pub fn spans_are_valid(&self) -> bool {
        let chars: Vec<char> = self.question.chars().collect();
        let mut last_end = 0;
        for m in &self.mappings {
            let Mention { char_start, char_end, surface_text, .. } = &m.mention;
            if char_start >= char_end || *char_end > chars.len() || *char_start < last_end {
                return false;
            }
            let slice: String = chars[*char_start..*char_end].iter().collect();
            if &slice != surface_text {
                return false;
            }
            last_end = *char_end;
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkWarning {
    /// The proposed phrase does not occur in the question.
    NoMentionLocated { surface: String },
    UnknownField { surface: String, table: String, column: String },
    /// Every proposed field was unknown, so the mapping was dropped.
    NoUsableFields { surface: String },
}

impl fmt::Display for LinkWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkWarning::NoMentionLocated { surface } => {
                write!(f, "phrase {surface:?} does not occur in the question")
            }
            LinkWarning::UnknownField { surface, table, column } => {
                write!(f, "{table}.{column} proposed for {surface:?} is not in the selected schema")
            }
            LinkWarning::NoUsableFields { surface } => {
                write!(f, "no usable fields proposed for {surface:?}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkOutcome {
    pub result: LinkingResult,
    pub warnings: Vec<LinkWarning>,
}

/// Asks the model to link `question` against `subset`.
pub fn link(
    provider: &dyn LlmProvider,
    question: &str,
    subset: &SchemaSubset,
    knowledge: &str,
) -> Result<LinkOutcome, LinkError> {
    if question.trim().is_empty() {
        return Err(LinkError::EmptyQuestion);
    }
    if subset.is_empty() {
        return Err(LinkError::EmptySubset);
    }
    let request = prompts::linking_request(question, subset, knowledge)?;
    let proposals = complete_with_repair(provider, &request, |text| {
        match parse_structured(text, OutputKind::LinkingJson)? {
            Structured::Linking(p) => Ok(p),
            _ => unreachable!("linking parse yields linking proposals"),
        }
    })?;
    Ok(build_linking(question, knowledge, &proposals, subset))
}

fn chars_eq_ignore_case(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// First case-insensitive occurrence of `needle` in `hay` not overlapping `taken`.
fn locate(hay: &[char], needle: &[char], taken: &[(usize, usize)]) -> Option<(usize, usize)> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| {
            hay[i..i + needle.len()]
                .iter()
                .zip(needle)
                .all(|(a, b)| chars_eq_ignore_case(*a, *b))
        })
        .map(|i| (i, i + needle.len()))
        .find(|&(s, e)| taken.iter().all(|&(ts, te)| e <= ts || s >= te))
}

/// Turns model proposals into a validated, unconfirmed [`LinkingResult`].
pub fn build_linking(
    question: &str,
    knowledge: &str,
    proposals: &[LinkProposal],
    subset: &SchemaSubset,
) -> LinkOutcome {
    let q: Vec<char> = question.chars().collect();
    let mut warnings = Vec::new();
    let mut placed: Vec<((usize, usize), Vec<FieldRef>)> = Vec::new();

    for p in proposals {
        let surface = p.surface.trim();
        let mut fields: Vec<FieldRef> = Vec::new();
        for f in &p.fields {
            match subset.resolve(&f.table, &f.column) {
                Some((t, c)) => {
                    let r = FieldRef::new(t, c);
                    if !fields.contains(&r) {
                        fields.push(r);
                    }
                }
                None => warnings.push(LinkWarning::UnknownField {
                    surface: surface.to_string(),
                    table: f.table.clone(),
                    column: f.column.clone(),
                }),
            }
        }
        if fields.is_empty() {
            warnings.push(LinkWarning::NoUsableFields { surface: surface.to_string() });
            continue;
        }
        let needle: Vec<char> = surface.chars().collect();
        let taken: Vec<(usize, usize)> = placed.iter().map(|(span, _)| *span).collect();
        match locate(&q, &needle, &taken) {
            Some(span) => placed.push((span, fields)),
            None => warnings.push(LinkWarning::NoMentionLocated { surface: surface.to_string() }),
        }
    }

    placed.sort_by_key(|((s, _), _)| *s);
    let mappings = placed
        .into_iter()
        .enumerate()
        .map(|(i, ((s, e), fields))| Mapping {
            mention: Mention {
                id: format!("m{}", i + 1),
                char_start: s,
                char_end: e,
                surface_text: q[s..e].iter().collect(),
            },
            fields,
            origin: MappingOrigin::Model,
        })
        .collect();

    LinkOutcome {
        result: LinkingResult {
            question: question.to_string(),
            knowledge: knowledge.to_string(),
            mappings,
            confirmed: false,
        },
        warnings,
    }
}

/// Replaces the fields of one mapping with a human-chosen set.
pub fn apply_correction(
    result: &LinkingResult,
    mention_id: &str,
    new_fields: &[FieldRef],
    subset: &SchemaSubset,
) -> Result<LinkingResult, LinkError> {
    let idx = result
        .mappings
        .iter()
        .position(|m| m.mention.id == mention_id)
        .ok_or_else(|| LinkError::UnknownMention(mention_id.to_string()))?;
    if new_fields.is_empty() {
        return Err(LinkError::EmptyFields);
    }
    let mut fields = Vec::with_capacity(new_fields.len());
    for f in new_fields {
        let (t, c) = subset.resolve(&f.table, &f.column).ok_or_else(|| LinkError::UnknownField {
            table: f.table.clone(),
            column: f.column.clone(),
        })?;
        let r = FieldRef::new(t, c);
        if !fields.contains(&r) {
            fields.push(r);
        }
    }
    let mut next = result.clone();
    next.mappings[idx].fields = fields;
    next.mappings[idx].origin = MappingOrigin::UserCorrected;
    next.confirmed = false;
    Ok(next)
}

pub fn confirm(result: &LinkingResult) -> LinkingResult {
    LinkingResult { confirmed: true, ..result.clone() }
}

/// The focused schema: mapped columns, the primary keys of every table that
/// contributed one, and the foreign-key columns joining two such tables.
/// With no mappings at all the input subset is returned unchanged.
pub fn derive_focused_schema(
    result: &LinkingResult,
    subset: &SchemaSubset,
) -> Result<SchemaSubset, LinkError> {
    if !result.confirmed {
        return Err(LinkError::NotConfirmed);
    }
    if result.mappings.is_empty() {
        return Ok(subset.clone());
    }
    let snapshot = subset.source();
    let mut keep: BTreeSet<(String, String)> = BTreeSet::new();
    for field in result.mappings.iter().flat_map(|m| &m.fields) {
        if let Some((t, c)) = subset.resolve(&field.table, &field.column) {
            keep.insert((t.to_string(), c.to_string()));
        }
    }
    let contributing: BTreeSet<String> = keep.iter().map(|(t, _)| t.clone()).collect();

    for table_name in &contributing {
        let table = snapshot.table(table_name).expect("subset tables exist in snapshot");
        for pk in table.primary_key_columns() {
            if let Some((t, c)) = subset.resolve(&table.name, &pk.name) {
                keep.insert((t.to_string(), c.to_string()));
            }
        }
        for fk in &table.foreign_keys {
            let joins_retained = contributing
                .iter()
                .any(|t| t.eq_ignore_ascii_case(&fk.target_table));
            if !joins_retained {
                continue;
            }
            if let Some((t, c)) = subset.resolve(&table.name, &fk.local_column) {
                keep.insert((t.to_string(), c.to_string()));
            }
            if let Some((t, c)) = subset.resolve(&fk.target_table, &fk.target_column) {
                keep.insert((t.to_string(), c.to_string()));
            }
        }
    }

    let spec: Vec<SubsetTable> = subset
        .tables()
        .iter()
        .filter_map(|t| {
            let columns: Vec<String> = t
                .columns
                .iter()
                .filter(|c| keep.contains(&(t.table.clone(), (*c).clone())))
                .cloned()
                .collect();
            (!columns.is_empty()).then(|| SubsetTable { table: t.table.clone(), columns })
        })
        .collect();
    Ok(SchemaSubset::new(Arc::clone(snapshot), spec)
        .expect("focused schema is drawn from a valid subset"))
}
