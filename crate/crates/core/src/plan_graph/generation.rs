//! The model-backed plan operations. Each one builds a prompt, interprets
//! the reply through the pure plan transitions in the parent module, and
//! gets one repair retry when the reply is unusable.

use crate::llm_gateway::{
    complete_with_repair, parse_structured, LlmProvider, OutputKind, StepDraft, Structured,
};
use crate::prompts;
use crate::schema_catalog::SchemaSubset;
use crate::sql_executor::ExecError;

use super::{FinalSql, Plan, PlanError};

/// Question, focused schema and external knowledge for plan prompts.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    pub question: &'a str,
    pub focused: &'a SchemaSubset,
    pub knowledge: &'a str,
}

fn plan_drafts(text: &str) -> Result<Vec<StepDraft>, PlanError> {
    match parse_structured(text, OutputKind::PlanJson)? {
        Structured::Plan(p) => Ok(p.steps),
        _ => unreachable!("plan parse yields a plan"),
    }
}

fn sql_statement(text: &str) -> Result<String, PlanError> {
    match parse_structured(text, OutputKind::SqlOnly)? {
        Structured::Sql(s) => Ok(s),
        _ => unreachable!("sql parse yields sql"),
    }
}

pub fn decompose(provider: &dyn LlmProvider, ctx: PlanContext<'_>) -> Result<Plan, PlanError> {
    let request = prompts::decompose_request(ctx.question, ctx.focused, ctx.knowledge)?;
    Ok(complete_with_repair(provider, &request, |text| {
        Plan::from_drafts(&plan_drafts(text)?)
    })?)
}

/// The replacement drafts for a regeneration, or `None` when there is
/// nothing to regenerate.
pub fn regenerate_downstream(
    provider: &dyn LlmProvider,
    plan: &Plan,
    from_step: &str,
    ctx: PlanContext<'_>,
) -> Result<Option<(Vec<StepDraft>, Plan)>, PlanError> {
    let targets = plan.regeneration_targets(from_step)?;
    let origin = plan
        .step(from_step)
        .ok_or_else(|| PlanError::UnknownStep(from_step.to_string()))?;
    if targets.is_empty() && !origin.explanation_revised {
        return Ok(None);
    }
    let mut fixed_ids = plan.ancestors(from_step)?;
    fixed_ids.push(from_step.to_string());
    let fixed: Vec<_> = plan.steps().iter().filter(|s| fixed_ids.contains(&s.id)).collect();
    let rewrite: Vec<_> = plan.steps().iter().filter(|s| targets.contains(&s.id)).collect();
    let request = prompts::regenerate_request(
        ctx.question,
        ctx.focused,
        ctx.knowledge,
        from_step,
        &fixed,
        &rewrite,
    )?;
    Ok(Some(complete_with_repair(provider, &request, |text| {
        let drafts = plan_drafts(text)?;
        let next = plan.with_replacements(from_step, &drafts)?;
        Ok::<_, PlanError>((drafts, next))
    })?))
}

/// Asks for a corrected statement for a step that failed to execute.
/// Returns the new SQL together with the updated plan.
pub fn refine_step(
    provider: &dyn LlmProvider,
    plan: &Plan,
    step_id: &str,
    error: &ExecError,
    focused: &SchemaSubset,
) -> Result<(String, Plan), PlanError> {
    let step = plan
        .step(step_id)
        .ok_or_else(|| PlanError::UnknownStep(step_id.to_string()))?;
    let request = prompts::refine_request(&step.sql, &error.message, focused)?;
    Ok(complete_with_repair(provider, &request, |text| {
        let sql = sql_statement(text)?;
        let next = plan.with_refined_sql(step_id, &sql)?;
        Ok::<_, PlanError>((sql, next))
    })?)
}

/// Final SQL: the single leaf's SQL verbatim, or a composition of all
/// leaves requested from the model.
pub fn finalize(
    provider: &dyn LlmProvider,
    plan: &Plan,
    ctx: PlanContext<'_>,
) -> Result<FinalSql, PlanError> {
    let leaves = plan.leaves();
    let forced = !plan.all_executed_ok();
    if let [leaf] = leaves.as_slice() {
        return Ok(FinalSql {
            sql: leaf.sql.clone(),
            derived_from_version: plan.version(),
            forced,
            composed: false,
        });
    }
    let leaf_ids: Vec<&str> = leaves.iter().map(|s| s.id.as_str()).collect();
    let request = prompts::finalize_request(
        ctx.question,
        ctx.focused,
        ctx.knowledge,
        plan.steps(),
        &leaf_ids,
    )?;
    let sql = complete_with_repair(provider, &request, sql_statement)?;
    Ok(FinalSql { sql, derived_from_version: plan.version(), forced, composed: true })
}
