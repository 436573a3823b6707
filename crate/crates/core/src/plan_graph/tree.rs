use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Plan;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: String,
    pub ordinal: usize,
    pub explanation: String,
    pub depends_on: Vec<String>,
    /// Steps that depend on this one, by ordinal.
    pub children: Vec<String>,
}

/// Dependency view of a plan for the tree panel. Edges point from a step to
/// the steps that build on it; a step with several dependencies appears once
/// with several parents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyTree {
    pub nodes: Vec<TreeNode>,
    pub roots: Vec<String>,
}

impl DependencyTree {
    pub fn from_plan(plan: &Plan) -> DependencyTree {
        let mut children: HashMap<&str, Vec<(usize, String)>> = HashMap::new();
        for s in plan.steps() {
            for d in &s.depends_on {
                children.entry(d.as_str()).or_default().push((s.ordinal, s.id.clone()));
            }
        }
        let nodes = plan
            .steps()
            .iter()
            .map(|s| {
                let mut kids = children.remove(s.id.as_str()).unwrap_or_default();
                kids.sort();
                TreeNode {
                    id: s.id.clone(),
                    ordinal: s.ordinal,
                    explanation: s.explanation.clone(),
                    depends_on: s.depends_on.clone(),
                    children: kids.into_iter().map(|(_, id)| id).collect(),
                }
            })
            .collect();
        let roots = plan
            .steps()
            .iter()
            .filter(|s| s.depends_on.is_empty())
            .map(|s| s.id.clone())
            .collect();
        DependencyTree { nodes, roots }
    }

    pub fn node(&self, id: &str) -> Option<&TreeNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// `(dependency, dependent)` pairs in node order.
    pub fn edges(&self) -> Vec<(String, String)> {
        self.nodes
            .iter()
            .flat_map(|n| n.children.iter().map(move |c| (n.id.clone(), c.clone())))
            .collect()
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        // Nodes are in plan order, so dependencies come first.
        let mut longest: HashMap<&str, usize> = HashMap::new();
        for n in &self.nodes {
            let d = 1 + n
                .depends_on
                .iter()
                .filter_map(|p| longest.get(p.as_str()))
                .max()
                .copied()
                .unwrap_or(0);
            longest.insert(&n.id, d);
        }
        longest.values().copied().max().unwrap_or(0)
    }
}
