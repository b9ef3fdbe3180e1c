use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ops::{assemble_input, descendants};
use super::validate::{validate, validate_with, Shape, ValidationRules};
use super::{GraphError, NodeId, NodeStatus, VerificationGraph};
use crate::retrieval::{merge_evidence, EvidenceSet};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraftMode {
    /// The failed node's dependents are rewired onto the sub-graph's sink and
    /// un-skipped, so the original plan resumes on repaired input.
    #[default]
    Rewire,
    /// Dependents stay SKIPPED; the sub-graph's sink stands in for them.
    Replace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraftOptions {
    pub budget: u32,
    pub mode: GraftMode,
}

/// Integrates `sub` at the FAILED node `failed` and returns the new graph; the
/// input graph is never modified.
///
/// Sub-graph ids get the `m<round>/` prefix, its roots depend on the failed node
/// (a context link carrying its evidence and instruction), and in rewire mode
/// the failed node's dependents move onto the sub-graph's sink.
pub fn graft(
    graph: &VerificationGraph,
    failed: &NodeId,
    sub: &VerificationGraph,
    opts: GraftOptions,
) -> Result<VerificationGraph, GraphError> {
    if graph.modification_count >= opts.budget {
        return Err(GraphError::BudgetExhausted {
            budget: opts.budget,
        });
    }
    let failed_node = graph.require(failed)?;
    if failed_node.status != NodeStatus::Failed {
        return Err(rejected(format!(
            "{failed} is {}, not FAILED",
            failed_node.status
        )));
    }
    let sub_rules = ValidationRules {
        shape: Shape::Subtree {
            sink: failed_node.node_type,
        },
        budget: None,
    };
    let report = validate_with(sub, &sub_rules);
    if !report.is_ok() {
        return Err(rejected(format!("sub-graph invalid: {report}")));
    }

    let failed_input = assemble_input(graph, failed)?;
    let round = graph.modification_count + 1;
    let rename: HashMap<&NodeId, NodeId> = sub
        .nodes
        .iter()
        .map(|n| (&n.id, n.id.namespaced(round)))
        .collect();
    if let Some(clash) = rename.values().find(|id| graph.node(id).is_some()) {
        return Err(rejected(format!("namespaced id {clash} already exists")));
    }
    let sink = sub
        .nodes
        .iter()
        .find(|n| !sub.nodes.iter().any(|m| m.dependencies.contains(&n.id)))
        .map(|n| rename[&n.id].clone())
        .expect("validated sub-graph has one sink");

    let mut out = graph.clone();
    let affected = descendants(graph, failed)?;
    {
        let f = out.node_mut(failed).expect("checked above");
        f.evidence = merge_evidence([&f.evidence, &failed_input.parent_evidence]);
    }
    if opts.mode == GraftMode::Rewire {
        for node in out.nodes.iter_mut() {
            for dep in node.dependencies.iter_mut() {
                if dep == failed {
                    *dep = sink.clone();
                }
            }
            if affected.contains(&node.id) && node.status == NodeStatus::Skipped {
                node.status = NodeStatus::Pending;
            }
        }
    }

    let context = format!(
        "Recovering failed {} step {failed}: {}",
        failed_node.node_type, failed_input.original
    );
    for n in &sub.nodes {
        let mut node = n.clone();
        node.id = rename[&n.id].clone();
        node.status = NodeStatus::Pending;
        node.output = None;
        node.evidence = EvidenceSet::new();
        if n.dependencies.is_empty() {
            node.dependencies = vec![failed.clone()];
            node.hint = if node.hint.trim().is_empty() {
                context.clone()
            } else {
                format!("{}\n{context}", node.hint)
            };
        } else {
            node.dependencies = n.dependencies.iter().map(|d| rename[d].clone()).collect();
        }
        out.nodes.push(node);
    }
    out.modification_count = round;

    let report = validate(&out);
    if !report.is_ok() {
        return Err(rejected(format!("result invalid: {report}")));
    }
    Ok(out)
}

fn rejected(msg: String) -> GraphError {
    GraphError::GraftRejected(msg)
}
