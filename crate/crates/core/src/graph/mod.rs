//! Verification graph data model.
//!
//! Edges live only in each node's `dependencies` list; dependents, frontier and
//! descendants are derived from those lists on demand.

mod graft;
mod ops;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::EvidenceSet;

pub use graft::{graft, GraftMode, GraftOptions};
pub use ops::{assemble_input, descendants, ready_frontier, NodeInput};
pub use validate::{validate, validate_with, Shape, ValidationReport, ValidationRules, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Id of this node after grafting in modification round `round`.
    pub fn namespaced(&self, round: u32) -> Self {
        Self(format!("m{round}/{}", self.0))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeType {
    Search,
    Refine,
    Think,
    Judge,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [
        NodeType::Search,
        NodeType::Refine,
        NodeType::Think,
        NodeType::Judge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Search => "SEARCH",
            NodeType::Refine => "REFINE",
            NodeType::Think => "THINK",
            NodeType::Judge => "JUDGE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeStatus {
    Pending,
    Ready,
    Running,
    Done,
    Failed,
    Skipped,
}

impl NodeStatus {
    /// Transitions allowed in normal execution. `Skipped -> Pending` is only
    /// performed by a graft.
    pub fn can_transition(self, to: NodeStatus) -> bool {
        use NodeStatus::*;
        matches!(
            (self, to),
            (Pending, Ready)
                | (Ready, Running)
                | (Running, Done)
                | (Running, Failed)
                | (Pending, Skipped)
                | (Skipped, Pending)
        )
    }

    /// Done, or failed and therefore only usable as context.
    pub fn is_settled(self) -> bool {
        matches!(self, NodeStatus::Done | NodeStatus::Failed)
    }
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeStatus::Pending => "PENDING",
            NodeStatus::Ready => "READY",
            NodeStatus::Running => "RUNNING",
            NodeStatus::Done => "DONE",
            NodeStatus::Failed => "FAILED",
            NodeStatus::Skipped => "SKIPPED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Static,
    Dynamic,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Static => "STATIC",
            Mode::Dynamic => "DYNAMIC",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub input: String,
    pub hint: String,
    pub dependencies: Vec<NodeId>,
    pub status: NodeStatus,
    pub output: Option<String>,
    pub evidence: EvidenceSet,
}

impl Node {
    pub fn new(id: impl Into<NodeId>, node_type: NodeType, input: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            node_type,
            input: input.into(),
            hint: String::new(),
            dependencies: Vec::new(),
            status: NodeStatus::Pending,
            output: None,
            evidence: EvidenceSet::new(),
        }
    }

    pub fn with_hint(mut self, hint: impl Into<String>) -> Self {
        self.hint = hint.into();
        self
    }

    pub fn depends_on<I, S>(mut self, deps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<NodeId>,
    {
        self.dependencies = deps.into_iter().map(Into::into).collect();
        self
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("illegal transition of {id}: {from} -> {to}")]
    IllegalTransition {
        id: NodeId,
        from: NodeStatus,
        to: NodeStatus,
    },
    #[error("node {id} is not ready: dependency {dependency} is {status}")]
    NotReady {
        id: NodeId,
        dependency: NodeId,
        status: NodeStatus,
    },
    #[error("a DONE node needs a non-empty output ({0})")]
    EmptyOutput(NodeId),
    #[error("modification budget of {budget} exhausted")]
    BudgetExhausted { budget: u32 },
    #[error("graft rejected: {0}")]
    GraftRejected(String),
}

/// Per-type node tally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub search: u32,
    pub refine: u32,
    pub think: u32,
    pub judge: u32,
}

impl TypeCounts {
    pub fn get(&self, t: NodeType) -> u32 {
        match t {
            NodeType::Search => self.search,
            NodeType::Refine => self.refine,
            NodeType::Think => self.think,
            NodeType::Judge => self.judge,
        }
    }

    fn bump(&mut self, t: NodeType) {
        match t {
            NodeType::Search => self.search += 1,
            NodeType::Refine => self.refine += 1,
            NodeType::Think => self.think += 1,
            NodeType::Judge => self.judge += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.search + self.refine + self.think + self.judge
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationGraph {
    pub claim: String,
    pub mode: Mode,
    pub modification_count: u32,
    pub nodes: Vec<Node>,
}

impl VerificationGraph {
    pub fn new(claim: impl Into<String>, mode: Mode, nodes: Vec<Node>) -> Self {
        Self {
            claim: claim.into(),
            mode,
            modification_count: 0,
            nodes,
        }
    }

    pub fn position(&self, id: &NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| &n.id == id)
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| &n.id == id)
    }

    fn require(&self, id: &NodeId) -> Result<&Node, GraphError> {
        self.node(id)
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }

    fn require_mut(&mut self, id: &NodeId) -> Result<&mut Node, GraphError> {
        self.node_mut(id)
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }

    /// Direct dependents of `id`, in graph order.
    pub fn dependents(&self, id: &NodeId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.dependencies.contains(id))
            .map(|n| n.id.clone())
            .collect()
    }

    pub fn type_counts(&self) -> TypeCounts {
        let mut counts = TypeCounts::default();
        for n in &self.nodes {
            counts.bump(n.node_type);
        }
        counts
    }

    /// JUDGE nodes that nothing depends on.
    pub fn judge_sinks(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| {
                n.node_type == NodeType::Judge
                    && !self.nodes.iter().any(|m| m.dependencies.contains(&n.id))
            })
            .map(|n| n.id.clone())
            .collect()
    }

    /// The JUDGE whose verdict answers the claim: the live (not failed or
    /// skipped) JUDGE sink, or the most recently added JUDGE sink if none is live.
    pub fn terminal_judge(&self) -> Option<NodeId> {
        let sinks = self.judge_sinks();
        sinks
            .iter()
            .find(|id| {
                let status = self.node(id).map(|n| n.status);
                !matches!(status, Some(NodeStatus::Failed) | Some(NodeStatus::Skipped))
            })
            .or_else(|| sinks.last())
            .cloned()
    }

    pub fn transition(&mut self, id: &NodeId, to: NodeStatus) -> Result<(), GraphError> {
        let node = self.require_mut(id)?;
        if !node.status.can_transition(to) {
            return Err(GraphError::IllegalTransition {
                id: id.clone(),
                from: node.status,
                to,
            });
        }
        node.status = to;
        Ok(())
    }

    /// RUNNING -> DONE with the node's output and accumulated evidence.
    pub fn complete(
        &mut self,
        id: &NodeId,
        output: String,
        evidence: EvidenceSet,
    ) -> Result<(), GraphError> {
        if output.trim().is_empty() {
            return Err(GraphError::EmptyOutput(id.clone()));
        }
        self.transition(id, NodeStatus::Done)?;
        let node = self.require_mut(id)?;
        node.output = Some(output);
        node.evidence = evidence;
        Ok(())
    }

    /// RUNNING -> FAILED, keeping whatever evidence the node had gathered.
    pub fn fail(&mut self, id: &NodeId, evidence: EvidenceSet) -> Result<(), GraphError> {
        self.transition(id, NodeStatus::Failed)?;
        let node = self.require_mut(id)?;
        node.output = None;
        node.evidence = evidence;
        Ok(())
    }

    /// Marks every PENDING descendant of `id` SKIPPED, except `keep`.
    pub fn skip_descendants(
        &mut self,
        id: &NodeId,
        keep: Option<&NodeId>,
    ) -> Result<Vec<NodeId>, GraphError> {
        let mut skipped = Vec::new();
        for d in descendants(self, id)? {
            if Some(&d) == keep {
                continue;
            }
            let node = self.require_mut(&d)?;
            if node.status == NodeStatus::Pending {
                node.status = NodeStatus::Skipped;
                skipped.push(d);
            }
        }
        Ok(skipped)
    }

    /// Puts a JUDGE back to READY for a forced binary judgment, from PENDING,
    /// SKIPPED or FAILED. This is the only way a node leaves FAILED.
    pub fn reopen_for_forced_judgment(&mut self, id: &NodeId) -> Result<(), GraphError> {
        let node = self.require_mut(id)?;
        match (node.node_type, node.status) {
            (NodeType::Judge, NodeStatus::Pending | NodeStatus::Skipped | NodeStatus::Failed) => {
                node.status = NodeStatus::Ready;
                node.output = None;
                Ok(())
            }
            (_, from) => Err(GraphError::IllegalTransition {
                id: id.clone(),
                from,
                to: NodeStatus::Ready,
            }),
        }
    }

    /// Pretty-printed JSON with a fixed field order; parsing it back and
    /// re-serializing yields identical bytes.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(raw)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// a -> {b, c} -> d, with d a JUDGE.
    pub fn diamond() -> VerificationGraph {
        VerificationGraph::new(
            "claim",
            Mode::Dynamic,
            vec![
                Node::new("a", NodeType::Search, "find a"),
                Node::new("b", NodeType::Think, "reason b").depends_on(["a"]),
                Node::new("c", NodeType::Think, "reason c").depends_on(["a"]),
                Node::new("d", NodeType::Judge, "claim").depends_on(["b", "c"]),
            ],
        )
    }

    pub fn chain(types: &[(&str, NodeType)]) -> VerificationGraph {
        let mut nodes = Vec::new();
        for (i, (id, t)) in types.iter().enumerate() {
            let mut n = Node::new(*id, *t, format!("input {id}"));
            if i > 0 {
                n = n.depends_on([types[i - 1].0]);
            }
            nodes.push(n);
        }
        VerificationGraph::new("claim", Mode::Dynamic, nodes)
    }

    pub fn finish(g: &mut VerificationGraph, id: &str, output: &str) {
        let id = NodeId::from(id);
        g.transition(&id, NodeStatus::Ready).unwrap();
        g.transition(&id, NodeStatus::Running).unwrap();
        g.complete(&id, output.into(), EvidenceSet::new()).unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::retrieval::EvidenceItem;

    #[test]
    fn legal_transitions_only() {
        use NodeStatus::*;
        let all = [Pending, Ready, Running, Done, Failed, Skipped];
        let legal: Vec<(NodeStatus, NodeStatus)> = all
            .iter()
            .flat_map(|&a| all.iter().map(move |&b| (a, b)))
            .filter(|(a, b)| a.can_transition(*b))
            .collect();
        assert_eq!(
            legal,
            vec![
                (Pending, Ready),
                (Pending, Skipped),
                (Ready, Running),
                (Running, Done),
                (Running, Failed),
                (Skipped, Pending)
            ]
        );
    }

    #[test]
    fn complete_requires_output() {
        let mut g = diamond();
        let a = NodeId::from("a");
        g.transition(&a, NodeStatus::Ready).unwrap();
        g.transition(&a, NodeStatus::Running).unwrap();
        assert_eq!(
            g.complete(&a, " ".into(), EvidenceSet::new()),
            Err(GraphError::EmptyOutput(a.clone()))
        );
        assert!(g.complete(&a, "ok".into(), EvidenceSet::new()).is_ok());
        assert!(matches!(
            g.transition(&a, NodeStatus::Running),
            Err(GraphError::IllegalTransition { .. })
        ));
    }

    #[test]
    fn canonical_json_round_trip() {
        let mut g = diamond();
        g.nodes[0].evidence = EvidenceSet::from_items([
            EvidenceItem::new("doc1", "first \"quoted\" para", 3.25),
            EvidenceItem::new("https://x", "second\npara", 0.1 + 0.2),
        ]);
        g.nodes[0].status = NodeStatus::Done;
        g.nodes[0].output = Some("summary".into());
        let json = g.to_canonical_json();
        let back = VerificationGraph::from_json(&json).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_canonical_json(), json);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, vec!["claim", "mode", "modification_count", "nodes"]);
        assert_eq!(v["nodes"][0]["type"], "SEARCH");
        assert_eq!(v["nodes"][1]["output"], serde_json::Value::Null);
    }

    #[test]
    fn terminal_judge_prefers_live_sink() {
        let mut g = chain(&[("s", NodeType::Search), ("j", NodeType::Judge)]);
        assert_eq!(g.terminal_judge(), Some(NodeId::from("j")));
        g.nodes[1].status = NodeStatus::Failed;
        g.nodes
            .push(Node::new("m1/j", NodeType::Judge, "claim").depends_on(["j"]));
        // j now has a dependent, so only m1/j is a sink
        assert_eq!(g.terminal_judge(), Some(NodeId::from("m1/j")));
    }

    #[test]
    fn forced_reopen_only_for_judges() {
        let mut g = chain(&[("s", NodeType::Search), ("j", NodeType::Judge)]);
        assert!(g.reopen_for_forced_judgment(&NodeId::from("s")).is_err());
        g.nodes[1].status = NodeStatus::Skipped;
        g.reopen_for_forced_judgment(&NodeId::from("j")).unwrap();
        assert_eq!(g.nodes[1].status, NodeStatus::Ready);
    }
}
