//! Nesting-depth spans and step attribution for the final SQL view.
//!
//! Both analyses work on character positions of the original text and
//! ignore parentheses and case inside string literals, quoted identifiers
//! and comments.

use serde::{Deserialize, Serialize};

use crate::plan_graph::Plan;
use crate::sql_lexer::{is_word_char, tokenize, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthSpan {
    pub char_start: usize,
    pub char_end: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanWarning {
    /// A `)` with no open parenthesis; depth stayed at 0.
    UnbalancedClose { position: usize },
    /// Parentheses still open at the end of the input.
    UnclosedOpen { count: usize },
    /// A quote or block comment runs to the end of the input.
    Unterminated { position: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthScan {
    pub spans: Vec<DepthSpan>,
    pub warnings: Vec<ScanWarning>,
}

/// Depth of every character. An opening parenthesis sits at the depth it
/// opens from and a closing one at the depth it returns to, so each
/// parenthesized region starts right after its `(` and ends right before
/// its `)`.
pub fn char_depths(sql: &str) -> (Vec<usize>, Vec<ScanWarning>) {
    let chars: Vec<char> = sql.chars().collect();
    let mut depths = vec![0; chars.len()];
    let mut warnings = Vec::new();
    let mut depth = 0usize;
    for tok in tokenize(&chars) {
        match tok.kind {
            TokenKind::Symbol('(') => {
                depths[tok.start] = depth;
                depth += 1;
            }
            TokenKind::Symbol(')') => {
                if depth == 0 {
                    warnings.push(ScanWarning::UnbalancedClose { position: tok.start });
                } else {
                    depth -= 1;
                }
                depths[tok.start] = depth;
            }
            kind => {
                let unterminated = matches!(
                    kind,
                    TokenKind::BlockComment { terminated: false }
                        | TokenKind::StringLiteral { terminated: false }
                        | TokenKind::QuotedIdent { terminated: false }
                );
                if unterminated {
                    warnings.push(ScanWarning::Unterminated { position: tok.start });
                }
                depths[tok.start..tok.end].fill(depth);
            }
        }
    }
    if depth > 0 {
        warnings.push(ScanWarning::UnclosedOpen { count: depth });
    }
    (depths, warnings)
}

pub fn depth_scan(sql: &str) -> DepthScan {
    let (depths, warnings) = char_depths(sql);
    let mut spans: Vec<DepthSpan> = Vec::new();
    for (i, &d) in depths.iter().enumerate() {
        match spans.last_mut() {
            Some(last) if last.depth == d => last.char_end = i + 1,
            _ => spans.push(DepthSpan { char_start: i, char_end: i + 1, depth: d }),
        }
    }
    DepthScan { spans, warnings }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpan {
    pub char_start: usize,
    pub char_end: usize,
    pub step_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub step_spans: Vec<StepSpan>,
    pub unattributed: Vec<Gap>,
}

/// SQL text reduced for matching, with each normalized character mapped
/// back to the original character it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub chars: Vec<char>,
    pub origin: Vec<usize>,
}

/// Lowercases everything outside quotes, turns comments into whitespace,
/// drops whitespace next to punctuation, collapses the rest to one space,
/// and trims. With `strip_semicolon`, a final `;` is dropped too.
pub fn normalize(sql: &str, strip_semicolon: bool) -> Normalized {
    let chars: Vec<char> = sql.chars().collect();
    let tokens = tokenize(&chars);
    let mut out = Normalized { chars: Vec::new(), origin: Vec::new() };
    let mut pending_space: Option<usize> = None;
    let mut last_is_symbol = true;
    for tok in &tokens {
        if tok.kind.is_trivia() {
            pending_space.get_or_insert(tok.start);
            continue;
        }
        let is_symbol = matches!(tok.kind, TokenKind::Symbol(_));
        if let Some(pos) = pending_space.take() {
            if !out.chars.is_empty() && !last_is_symbol && !is_symbol {
                out.chars.push(' ');
                out.origin.push(pos);
            }
        }
        for (i, &c) in chars.iter().enumerate().take(tok.end).skip(tok.start) {
            out.chars.push(if tok.kind.is_quoted() { c } else { c.to_ascii_lowercase() });
            out.origin.push(i);
        }
        last_is_symbol = is_symbol;
    }
    if strip_semicolon && out.chars.last() == Some(&';') {
        out.chars.pop();
        out.origin.pop();
    }
    out
}

fn find_from(hay: &[char], needle: &[char], from: usize) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| hay[i..i + needle.len()] == *needle)
}

/// A match must not start or end in the middle of a word.
fn on_word_boundaries(hay: &[char], start: usize, end: usize) -> bool {
    let glued = |a: Option<&char>, b: Option<&char>| {
        matches!((a, b), (Some(&a), Some(&b)) if is_word_char(a) && is_word_char(b))
    };
    let before = start.checked_sub(1).and_then(|i| hay.get(i));
    !glued(before, hay.get(start)) && !glued(hay.get(end - 1), hay.get(end))
}

/// A candidate may sit beside every claim or strictly inside it.
fn fits(claims: &[(usize, usize, usize)], s: usize, e: usize) -> bool {
    claims.iter().all(|&(cs, ce, _)| e <= cs || ce <= s || (cs <= s && e <= ce && (cs, ce) != (s, e)))
}

pub fn attribute_steps(final_sql: &str, plan: &Plan) -> Attribution {
    let len = final_sql.chars().count();
    let hay = normalize(final_sql, false);
    // (start, end, step index) in normalized coordinates.
    let mut claims: Vec<(usize, usize, usize)> = Vec::new();
    let mut order: Vec<usize> = (0..plan.steps().len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(plan.steps()[i].ordinal));
    for i in order {
        let needle = normalize(&plan.steps()[i].sql, true).chars;
        let mut from = 0;
        while let Some(s) = find_from(&hay.chars, &needle, from) {
            let e = s + needle.len();
            if on_word_boundaries(&hay.chars, s, e) && fits(&claims, s, e) {
                claims.push((s, e, i));
                break;
            }
            from = s + 1;
        }
    }

    // Claims are laminar, so the shortest containing claim is the innermost.
    let mut owner: Vec<Option<(usize, usize)>> = vec![None; len];
    for &(s, e, step) in &claims {
        let (os, oe) = (hay.origin[s], hay.origin[e - 1] + 1);
        for slot in &mut owner[os..oe] {
            if slot.is_none_or(|(_, l)| oe - os < l) {
                *slot = Some((step, oe - os));
            }
        }
    }

    let mut out = Attribution { step_spans: Vec::new(), unattributed: Vec::new() };
    let mut i = 0;
    while i < len {
        let cur = owner[i].map(|(s, _)| s);
        let mut j = i + 1;
        while j < len && owner[j].map(|(s, _)| s) == cur {
            j += 1;
        }
        match cur {
            Some(step) => out.step_spans.push(StepSpan {
                char_start: i,
                char_end: j,
                step_id: plan.steps()[step].id.clone(),
            }),
            None => out.unattributed.push(Gap { char_start: i, char_end: j }),
        }
        i = j;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSql {
    pub sql: String,
    pub depth_spans: Vec<DepthSpan>,
    pub step_spans: Vec<StepSpan>,
    pub unattributed: Vec<Gap>,
    pub warnings: Vec<ScanWarning>,
}

pub fn annotate(final_sql: &str, plan: &Plan) -> AnnotatedSql {
    let scan = depth_scan(final_sql);
    let attribution = attribute_steps(final_sql, plan);
    AnnotatedSql {
        sql: final_sql.to_string(),
        depth_spans: scan.spans,
        step_spans: attribution.step_spans,
        unattributed: attribution.unattributed,
        warnings: scan.warnings,
    }
}
