use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{GraphError, NodeId, NodeStatus, NodeType, VerificationGraph};
use crate::retrieval::{merge_evidence, EvidenceSet};

/// Everything a node operation sees: its (possibly REFINE-substituted)
/// instruction, its parents' outputs in dependency order, their merged
/// evidence, and its hint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeInput {
    pub original: String,
    pub parent_outputs: Vec<(NodeId, String)>,
    pub parent_evidence: EvidenceSet,
    pub hint: String,
}

impl NodeInput {
    pub fn has_context(&self) -> bool {
        !self.parent_outputs.is_empty() || !self.parent_evidence.is_empty()
    }
}

/// PENDING nodes whose dependencies are all settled, in graph order.
///
/// A FAILED dependency counts as settled: once a node fails its former
/// dependents are either SKIPPED or rewired, so the only PENDING nodes still
/// pointing at it are graft roots that take it as context.
pub fn ready_frontier(graph: &VerificationGraph) -> Vec<NodeId> {
    graph
        .nodes
        .iter()
        .filter(|n| n.status == NodeStatus::Pending)
        .filter(|n| {
            n.dependencies
                .iter()
                .all(|d| graph.node(d).is_some_and(|p| p.status.is_settled()))
        })
        .map(|n| n.id.clone())
        .collect()
}

/// Every node reachable from `id` along reverse dependency edges, excluding `id`.
pub fn descendants(graph: &VerificationGraph, id: &NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
    if graph.node(id).is_none() {
        return Err(GraphError::UnknownNode(id.clone()));
    }
    let mut out = BTreeSet::new();
    let mut queue = VecDeque::from([id.clone()]);
    while let Some(cur) = queue.pop_front() {
        for child in graph.dependents(&cur) {
            if child != *id && out.insert(child.clone()) {
                queue.push_back(child);
            }
        }
    }
    Ok(out)
}

pub fn assemble_input(graph: &VerificationGraph, id: &NodeId) -> Result<NodeInput, GraphError> {
    let node = graph.require(id)?;
    let mut parent_outputs = Vec::new();
    let mut evidence = Vec::new();
    let mut original = node.input.clone();
    for dep in &node.dependencies {
        let parent = graph.require(dep)?;
        if !parent.status.is_settled() {
            return Err(GraphError::NotReady {
                id: id.clone(),
                dependency: dep.clone(),
                status: parent.status,
            });
        }
        if let (NodeStatus::Done, Some(out)) = (parent.status, &parent.output) {
            if parent.node_type == NodeType::Refine {
                original = out.clone();
            }
            parent_outputs.push((dep.clone(), out.clone()));
        }
        evidence.push(&parent.evidence);
    }
    Ok(NodeInput {
        original,
        parent_outputs,
        parent_evidence: merge_evidence(evidence),
        hint: node.hint.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::graph::{Mode, Node};
    use crate::retrieval::EvidenceItem;

    fn ids(v: &[&str]) -> Vec<NodeId> {
        v.iter().map(|s| NodeId::from(*s)).collect()
    }

    fn set(v: &[&str]) -> BTreeSet<NodeId> {
        v.iter().map(|s| NodeId::from(*s)).collect()
    }

    #[test]
    fn fresh_roots_are_ready() {
        let g = VerificationGraph::new(
            "c",
            Mode::Static,
            vec![
                Node::new("a", NodeType::Search, "x"),
                Node::new("b", NodeType::Search, "y"),
                Node::new("j", NodeType::Judge, "c").depends_on(["a", "b"]),
            ],
        );
        assert_eq!(ready_frontier(&g), ids(&["a", "b"]));
    }

    #[test]
    fn diamond_frontier() {
        let mut g = diamond();
        finish(&mut g, "a", "out a");
        assert_eq!(ready_frontier(&g), ids(&["b", "c"]));
        finish(&mut g, "b", "out b");
        let c = NodeId::from("c");
        g.transition(&c, NodeStatus::Ready).unwrap();
        g.transition(&c, NodeStatus::Running).unwrap();
        assert!(ready_frontier(&g).is_empty());
    }

    #[test]
    fn descendant_sets() {
        let chain = chain(&[
            ("a", NodeType::Search),
            ("b", NodeType::Think),
            ("c", NodeType::Judge),
        ]);
        assert_eq!(descendants(&chain, &"a".into()).unwrap(), set(&["b", "c"]));
        assert!(descendants(&chain, &"c".into()).unwrap().is_empty());
        assert_eq!(descendants(&diamond(), &"b".into()).unwrap(), set(&["d"]));
        assert_eq!(
            descendants(&diamond(), &"zz".into()),
            Err(GraphError::UnknownNode("zz".into()))
        );
    }

    #[test]
    fn refine_output_replaces_input() {
        let mut g = chain(&[
            ("s", NodeType::Search),
            ("r", NodeType::Refine),
            ("t", NodeType::Think),
        ]);
        finish(&mut g, "s", "found");
        finish(&mut g, "r", "Q'");
        let input = assemble_input(&g, &"t".into()).unwrap();
        assert_eq!(input.original, "Q'");
        assert_eq!(
            input.parent_outputs,
            vec![(NodeId::from("r"), "Q'".to_string())]
        );
    }

    #[test]
    fn parent_evidence_is_deduplicated() {
        let mut g = VerificationGraph::new(
            "c",
            Mode::Static,
            vec![
                Node::new("s1", NodeType::Search, "x"),
                Node::new("s2", NodeType::Search, "y"),
                Node::new("j", NodeType::Judge, "c").depends_on(["s1", "s2"]),
            ],
        );
        let shared = EvidenceItem::new("d2", "shared", 1.0);
        let e1 = EvidenceSet::from_items([EvidenceItem::new("d1", "one", 2.0), shared.clone()]);
        let e2 = EvidenceSet::from_items([shared, EvidenceItem::new("d3", "three", 1.0)]);
        for (id, e) in [("s1", e1.clone()), ("s2", e2.clone())] {
            let id = NodeId::from(id);
            g.transition(&id, NodeStatus::Ready).unwrap();
            g.transition(&id, NodeStatus::Running).unwrap();
            g.complete(&id, "done".into(), e).unwrap();
        }
        let input = assemble_input(&g, &"j".into()).unwrap();
        assert_eq!(input.parent_evidence, merge_evidence([&e1, &e2]));
        assert_eq!(input.parent_evidence.len(), 3);
        assert_eq!(input.parent_outputs.len(), 2);
        assert_eq!(input.parent_outputs[0].0, NodeId::from("s1"));
    }

    #[test]
    fn root_input_is_own_input() {
        let g = diamond();
        let input = assemble_input(&g, &"a".into()).unwrap();
        assert!(input.parent_outputs.is_empty());
        assert_eq!(input.original, "find a");
    }

    #[test]
    fn unsatisfied_dependency_is_not_ready() {
        let g = diamond();
        assert!(matches!(
            assemble_input(&g, &"b".into()),
            Err(GraphError::NotReady { .. })
        ));
    }
}
