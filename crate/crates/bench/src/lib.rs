//! Inputs shared by the benchmarks.

use querytrail_core::llm_gateway::StepDraft;
use querytrail_core::plan_graph::Plan;

/// SQL nested `levels` deep: `SELECT x FROM (SELECT x FROM (... t))`.
pub fn nested_sql(levels: usize) -> String {
    let mut sql = "SELECT x FROM t WHERE y = 'a (quoted) value' -- trailing )\n".to_string();
    for _ in 0..levels {
        sql = format!("SELECT x FROM ({sql}) /* wrap */");
    }
    sql
}

/// A linear plan whose step `i` embeds step `i - 1`, plus its final SQL.
pub fn chain_plan(n: usize) -> (Plan, String) {
    let mut sql = "SELECT x FROM t".to_string();
    let mut drafts = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            sql = format!("SELECT x FROM ({sql}) WHERE x > {i}");
        }
        drafts.push(StepDraft {
            id: format!("s{}", i + 1),
            explanation: format!("step {}", i + 1),
            sql: sql.clone(),
            depends_on: Some(if i == 0 { vec![] } else { vec![format!("s{i}")] }),
        });
    }
    (Plan::from_drafts(&drafts).expect("valid chain"), sql)
}

/// A layered DAG: each step depends on up to two steps of the previous layer.
pub fn layered_plan(layers: usize, width: usize) -> Plan {
    let id = |l: usize, w: usize| format!("l{l}w{w}");
    let mut drafts = Vec::new();
    for l in 0..layers {
        for w in 0..width {
            let deps = if l == 0 { vec![] } else { vec![id(l - 1, w), id(l - 1, (w + 1) % width)] };
            drafts.push(StepDraft {
                id: id(l, w),
                explanation: format!("layer {l} item {w}"),
                sql: format!("SELECT {l}, {w}"),
                depends_on: Some(deps),
            });
        }
    }
    Plan::from_drafts(&drafts).expect("valid layered plan")
}
