//! Decomposed query plans: a DAG of explained sub-queries.
//!
//! Plans are immutable values. Every mutation returns a new plan with a
//! higher `version`, and steps that do not depend on the changed step are
//! carried over untouched. Descendants of a changed step are marked
//! [`StepStatus::Stale`] instead of being rewritten on the spot; rewriting
//! them is a separate, user-triggered regeneration.

mod generation;
mod tree;

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_gateway::{LlmError, RepairError, StepDraft};
use crate::sql_executor::{ExecError, ResultPreview};

pub use generation::{decompose, finalize, refine_step, regenerate_downstream, PlanContext};
pub use tree::{DependencyTree, TreeNode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unknown step: {0}")]
    UnknownStep(String),
    #[error("regeneration left stale steps without replacement: {}", missing.join(", "))]
    IncompleteRegeneration { missing: Vec<String> },
    #[error("edit must change the explanation or the SQL")]
    EmptyEdit,
}

impl From<RepairError<PlanError>> for PlanError {
    fn from(e: RepairError<PlanError>) -> Self {
        match e {
            RepairError::Provider(e) => PlanError::Llm(e),
            RepairError::Rejected(e) => e,
        }
    }
}

fn invalid(reason: impl Into<String>) -> PlanError {
    PlanError::InvalidPlan(reason.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    ExecutedOk,
    ExecutedError,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Preview(ResultPreview),
    Error(ExecError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub id: String,
    /// 1-based display position.
    pub ordinal: usize,
    pub explanation: String,
    pub sql: String,
    pub depends_on: Vec<String>,
    pub status: StepStatus,
    pub last_result: Option<StepOutcome>,
    /// The explanation was edited without a matching SQL change.
    #[serde(default)]
    pub explanation_revised: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalSql {
    pub sql: String,
    pub derived_from_version: u64,
    /// Finalized although not every step had executed successfully.
    pub forced: bool,
    /// Produced by a composition call rather than copied from the single leaf.
    pub composed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    steps: Vec<Step>,
    final_sql: Option<FinalSql>,
    version: u64,
}

impl Plan {
    /// Builds a version-1 plan from model drafts. A missing `depends_on`
    /// means no dependencies; duplicate dependency ids are collapsed.
    pub fn from_drafts(drafts: &[StepDraft]) -> Result<Plan, PlanError> {
        let steps = drafts
            .iter()
            .enumerate()
            .map(|(i, d)| Step {
                id: d.id.trim().to_string(),
                ordinal: i + 1,
                explanation: d.explanation.trim().to_string(),
                sql: d.sql.trim().to_string(),
                depends_on: dedup(d.depends_on.clone().unwrap_or_default()),
                status: StepStatus::Pending,
                last_result: None,
                explanation_revised: false,
            })
            .collect();
        Plan::from_steps(steps, 1)
    }

    /// Validates the structural invariants and wraps `steps` as a plan.
    pub fn from_steps(steps: Vec<Step>, version: u64) -> Result<Plan, PlanError> {
        validate_steps(&steps)?;
        Ok(Plan { steps, final_sql: None, version })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn step(&self, id: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.id == id)
    }

    fn index_of(&self, id: &str) -> Result<usize, PlanError> {
        self.steps
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| PlanError::UnknownStep(id.to_string()))
    }

    pub fn final_sql(&self) -> Option<&FinalSql> {
        self.final_sql.as_ref()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn dependents(&self) -> HashMap<&str, Vec<usize>> {
        let mut out: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, s) in self.steps.iter().enumerate() {
            for d in &s.depends_on {
                out.entry(d.as_str()).or_default().push(i);
            }
        }
        out
    }

    /// Steps transitively depending on `id`, in plan order.
    pub fn descendants(&self, id: &str) -> Result<Vec<String>, PlanError> {
        self.index_of(id)?;
        let dependents = self.dependents();
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut queue: VecDeque<&str> = VecDeque::from([id]);
        while let Some(cur) = queue.pop_front() {
            for &i in dependents.get(cur).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(i) {
                    queue.push_back(&self.steps[i].id);
                }
            }
        }
        Ok(seen.into_iter().map(|i| self.steps[i].id.clone()).collect())
    }

    /// Steps `id` transitively depends on, in plan order.
    pub fn ancestors(&self, id: &str) -> Result<Vec<String>, PlanError> {
        let start = self.index_of(id)?;
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for d in &self.steps[i].depends_on {
                let j = self.index_of(d)?;
                if seen.insert(j) {
                    stack.push(j);
                }
            }
        }
        Ok(seen.into_iter().map(|i| self.steps[i].id.clone()).collect())
    }

    /// Steps no other step depends on, in plan order.
    pub fn leaves(&self) -> Vec<&Step> {
        let dependents = self.dependents();
        self.steps
            .iter()
            .filter(|s| !dependents.contains_key(s.id.as_str()))
            .collect()
    }

    pub fn dependency_tree(&self) -> DependencyTree {
        DependencyTree::from_plan(self)
    }

    fn next_version(&self, steps: Vec<Step>) -> Result<Plan, PlanError> {
        validate_steps(&steps)?;
        Ok(Plan { steps, final_sql: None, version: self.version + 1 })
    }

    /// Same steps, version bumped, final SQL cleared.
    pub fn bumped(&self) -> Plan {
        Plan { steps: self.steps.clone(), final_sql: None, version: self.version + 1 }
    }

    fn mark_stale(&self, steps: &mut [Step], changed: &str) -> Result<(), PlanError> {
        for d in self.descendants(changed)? {
            let i = self.index_of(&d)?;
            steps[i].status = StepStatus::Stale;
        }
        Ok(())
    }

    /// Human edit of one step. The step goes back to pending and every
    /// descendant becomes stale.
    pub fn edit_step(
        &self,
        id: &str,
        new_explanation: Option<&str>,
        new_sql: Option<&str>,
    ) -> Result<Plan, PlanError> {
        let i = self.index_of(id)?;
        if new_explanation.is_none() && new_sql.is_none() {
            return Err(PlanError::EmptyEdit);
        }
        let mut steps = self.steps.clone();
        let step = &mut steps[i];
        if let Some(e) = new_explanation {
            step.explanation = e.trim().to_string();
        }
        match new_sql {
            Some(sql) => {
                step.sql = sql.trim().to_string();
                step.explanation_revised = false;
            }
            None => step.explanation_revised = true,
        }
        step.status = StepStatus::Pending;
        step.last_result = None;
        self.mark_stale(&mut steps, id)?;
        self.next_version(steps)
    }

    /// Replaces one step's SQL (the self-correction path).
    pub fn with_refined_sql(&self, id: &str, sql: &str) -> Result<Plan, PlanError> {
        let i = self.index_of(id)?;
        let mut steps = self.steps.clone();
        steps[i].sql = sql.trim().to_string();
        steps[i].status = StepStatus::Pending;
        steps[i].last_result = None;
        steps[i].explanation_revised = false;
        self.mark_stale(&mut steps, id)?;
        self.next_version(steps)
    }

    /// Records an execution result. Does not change the version; a stale
    /// step stays stale.
    pub fn with_execution(&self, id: &str, outcome: StepOutcome) -> Result<Plan, PlanError> {
        let i = self.index_of(id)?;
        let mut next = self.clone();
        let step = &mut next.steps[i];
        if step.status != StepStatus::Stale {
            step.status = match outcome {
                StepOutcome::Preview(_) => StepStatus::ExecutedOk,
                StepOutcome::Error(_) => StepStatus::ExecutedError,
            };
        }
        step.last_result = Some(outcome);
        Ok(next)
    }

    /// Steps a regeneration from `from` must replace: its stale descendants.
    pub fn regeneration_targets(&self, from: &str) -> Result<Vec<String>, PlanError> {
        Ok(self
            .descendants(from)?
            .into_iter()
            .filter(|id| self.step(id).is_some_and(|s| s.status == StepStatus::Stale))
            .collect())
    }

    /// Applies regeneration replacements for the stale descendants of `from`
    /// (and optionally `from` itself). Everything else is left byte-identical.
    pub fn with_replacements(&self, from: &str, replacements: &[StepDraft]) -> Result<Plan, PlanError> {
        self.index_of(from)?;
        let required = self.regeneration_targets(from)?;
        let mut seen: Vec<&str> = Vec::new();
        for r in replacements {
            let id = r.id.trim();
            if self.step(id).is_none() {
                return Err(invalid(format!("replacement for unknown step {id}")));
            }
            if id != from && !required.iter().any(|s| s == id) {
                return Err(invalid(format!("replacement targets preserved step {id}")));
            }
            if seen.contains(&id) {
                return Err(invalid(format!("step {id} replaced twice")));
            }
            seen.push(id);
        }
        let missing: Vec<String> = required
            .iter()
            .filter(|id| !seen.contains(&id.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(PlanError::IncompleteRegeneration { missing });
        }

        let mut steps = self.steps.clone();
        let mut replaced: Vec<&str> = Vec::new();
        for r in replacements {
            let i = self.index_of(r.id.trim())?;
            let step = &mut steps[i];
            step.explanation = r.explanation.trim().to_string();
            step.sql = r.sql.trim().to_string();
            if let Some(deps) = &r.depends_on {
                step.depends_on = dedup(deps.clone());
            }
            step.status = StepStatus::Pending;
            step.last_result = None;
            step.explanation_revised = false;
            replaced.push(r.id.trim());
        }
        validate_steps(&steps)?;
        // A rewritten step invalidates any dependent that was not rewritten with it.
        let staged = Plan { steps: steps.clone(), final_sql: None, version: self.version };
        for id in &replaced {
            for d in staged.descendants(id)? {
                if !replaced.contains(&d.as_str()) {
                    let i = staged.index_of(&d)?;
                    steps[i].status = StepStatus::Stale;
                }
            }
        }
        self.next_version(steps)
    }

    pub fn with_final(&self, final_sql: FinalSql) -> Plan {
        Plan { final_sql: Some(final_sql), ..self.clone() }
    }

    pub fn without_final(&self) -> Plan {
        Plan { final_sql: None, ..self.clone() }
    }

    pub fn all_executed_ok(&self) -> bool {
        self.steps.iter().all(|s| s.status == StepStatus::ExecutedOk)
    }
}

fn dedup(ids: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(ids.len());
    for id in ids {
        let id = id.trim().to_string();
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

/// Ids are unique, text is non-empty, ordinals are 1..=n, and every
/// dependency names an earlier step. The last rule makes cycles impossible.
fn validate_steps(steps: &[Step]) -> Result<(), PlanError> {
    if steps.is_empty() {
        return Err(invalid("plan has no steps"));
    }
    let position: HashMap<&str, usize> =
        steps.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    for (i, s) in steps.iter().enumerate() {
        if s.id.is_empty() {
            return Err(invalid(format!("step {} has an empty id", i + 1)));
        }
        if steps[..i].iter().any(|p| p.id == s.id) {
            return Err(invalid(format!("duplicate step id {}", s.id)));
        }
        if s.ordinal != i + 1 {
            return Err(invalid(format!("step {} has ordinal {}", s.id, s.ordinal)));
        }
        if s.explanation.is_empty() {
            return Err(invalid(format!("step {} has an empty explanation", s.id)));
        }
        if s.sql.is_empty() {
            return Err(invalid(format!("step {} has empty sql", s.id)));
        }
        for d in &s.depends_on {
            match position.get(d.as_str()) {
                None => return Err(invalid(format!("step {} depends on unknown step {d}", s.id))),
                Some(&j) if j == i => {
                    return Err(invalid(format!("cycle: step {} depends on itself", s.id)))
                }
                Some(&j) if j > i => {
                    let kind = if reaches(steps, &position, j, i) { "cycle" } else { "forward dependency" };
                    return Err(invalid(format!("{kind}: step {} depends on later step {d}", s.id)));
                }
                Some(_) => {}
            }
        }
    }
    Ok(())
}

/// Whether step `from` reaches step `to` by following dependencies.
fn reaches(steps: &[Step], position: &HashMap<&str, usize>, from: usize, to: usize) -> bool {
    let mut seen = vec![false; steps.len()];
    let mut stack = vec![from];
    while let Some(i) = stack.pop() {
        if i == to {
            return true;
        }
        if std::mem::replace(&mut seen[i], true) {
            continue;
        }
        stack.extend(steps[i].depends_on.iter().filter_map(|d| position.get(d.as_str()).copied()));
    }
    false
}
