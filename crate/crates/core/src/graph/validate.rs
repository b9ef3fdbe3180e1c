use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{NodeId, NodeStatus, NodeType, VerificationGraph};

/// What a structurally valid graph must look like.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// A full plan: one live terminal JUDGE.
    Plan,
    /// A replacement sub-graph: exactly one sink, of the given type.
    Subtree { sink: NodeType },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationRules {
    pub shape: Shape,
    pub budget: Option<u32>,
}

impl Default for ValidationRules {
    fn default() -> Self {
        Self {
            shape: Shape::Plan,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId {
        index: usize,
    },
    DuplicateId(NodeId),
    DuplicateDependency {
        node: NodeId,
        dependency: NodeId,
    },
    UnresolvedDependency {
        node: NodeId,
        dependency: NodeId,
    },
    Cycle(Vec<NodeId>),
    MultipleRefineParents {
        node: NodeId,
        parents: Vec<NodeId>,
    },
    NoTerminalJudge,
    MultipleTerminalJudges(Vec<NodeId>),
    SinkCount(Vec<NodeId>),
    SinkType {
        node: NodeId,
        expected: NodeType,
        found: NodeType,
    },
    OutputStatus {
        node: NodeId,
        status: NodeStatus,
    },
    DuplicateEvidence(NodeId),
    BudgetExceeded {
        count: u32,
        budget: u32,
    },
}

fn join(ids: &[NodeId]) -> String {
    ids.iter().map(NodeId::as_str).collect::<Vec<_>>().join(",")
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId { index } => write!(f, "empty id at node index {index}"),
            Violation::DuplicateId(id) => write!(f, "duplicate id {id}"),
            Violation::DuplicateDependency { node, dependency } => {
                write!(f, "dependency {dependency} listed twice at {node}")
            }
            Violation::UnresolvedDependency { node, dependency } => {
                write!(f, "unresolved dependency {dependency} at {node}")
            }
            Violation::Cycle(ids) => write!(f, "cycle {{{}}}", join(ids)),
            Violation::MultipleRefineParents { node, parents } => {
                write!(f, "multiple REFINE parents {{{}}} at {node}", join(parents))
            }
            Violation::NoTerminalJudge => f.write_str("no terminal JUDGE"),
            Violation::MultipleTerminalJudges(ids) => {
                write!(f, "multiple terminal JUDGE nodes {{{}}}", join(ids))
            }
            Violation::SinkCount(ids) => {
                write!(f, "expected exactly one sink, found {{{}}}", join(ids))
            }
            Violation::SinkType {
                node,
                expected,
                found,
            } => {
                write!(f, "sink {node} has type {found}, expected {expected}")
            }
            Violation::OutputStatus { node, status } => {
                write!(f, "output/status mismatch at {node} (status {status})")
            }
            Violation::DuplicateEvidence(id) => write!(f, "duplicate evidence at {id}"),
            Violation::BudgetExceeded { count, budget } => {
                write!(f, "modification count {count} exceeds budget {budget}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

pub fn validate(graph: &VerificationGraph) -> ValidationReport {
    validate_with(graph, &ValidationRules::default())
}

pub fn validate_with(graph: &VerificationGraph, rules: &ValidationRules) -> ValidationReport {
    let mut v = Vec::new();

    let mut index: HashMap<&NodeId, usize> = HashMap::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        if node.id.as_str().is_empty() {
            v.push(Violation::EmptyId { index: i });
        }
        if index.insert(&node.id, i).is_some() {
            v.push(Violation::DuplicateId(node.id.clone()));
        }
    }

    for node in &graph.nodes {
        let mut seen = HashSet::new();
        let mut refine_parents = Vec::new();
        for dep in &node.dependencies {
            if !seen.insert(dep) {
                v.push(Violation::DuplicateDependency {
                    node: node.id.clone(),
                    dependency: dep.clone(),
                });
                continue;
            }
            match index.get(dep) {
                None => v.push(Violation::UnresolvedDependency {
                    node: node.id.clone(),
                    dependency: dep.clone(),
                }),
                Some(&i) if graph.nodes[i].node_type == NodeType::Refine => {
                    refine_parents.push(dep.clone())
                }
                Some(_) => {}
            }
        }
        if refine_parents.len() > 1 {
            v.push(Violation::MultipleRefineParents {
                node: node.id.clone(),
                parents: refine_parents,
            });
        }
        let has_output = node.output.as_deref().is_some_and(|o| !o.trim().is_empty());
        if has_output != (node.status == NodeStatus::Done) {
            v.push(Violation::OutputStatus {
                node: node.id.clone(),
                status: node.status,
            });
        }
        if node.evidence.has_duplicates() {
            v.push(Violation::DuplicateEvidence(node.id.clone()));
        }
    }

    for cycle in cycles(graph, &index) {
        v.push(Violation::Cycle(cycle));
    }

    let has_dependent: HashSet<&NodeId> = graph
        .nodes
        .iter()
        .flat_map(|n| n.dependencies.iter())
        .collect();
    let sinks: Vec<&super::Node> = graph
        .nodes
        .iter()
        .filter(|n| !has_dependent.contains(&n.id))
        .collect();
    match rules.shape {
        Shape::Plan => {
            let judge_sinks: Vec<&&super::Node> = sinks
                .iter()
                .filter(|n| n.node_type == NodeType::Judge)
                .collect();
            let live: Vec<NodeId> = judge_sinks
                .iter()
                .filter(|n| !matches!(n.status, NodeStatus::Failed | NodeStatus::Skipped))
                .map(|n| n.id.clone())
                .collect();
            if judge_sinks.is_empty() {
                v.push(Violation::NoTerminalJudge);
            } else if live.len() > 1 {
                v.push(Violation::MultipleTerminalJudges(live));
            }
        }
        Shape::Subtree { sink } => {
            if sinks.len() != 1 {
                v.push(Violation::SinkCount(
                    sinks.iter().map(|n| n.id.clone()).collect(),
                ));
            } else if sinks[0].node_type != sink {
                v.push(Violation::SinkType {
                    node: sinks[0].id.clone(),
                    expected: sink,
                    found: sinks[0].node_type,
                });
            }
        }
    }

    if let Some(budget) = rules.budget {
        if graph.modification_count > budget {
            v.push(Violation::BudgetExceeded {
                count: graph.modification_count,
                budget,
            });
        }
    }

    ValidationReport { violations: v }
}

/// Strongly connected components that contain a cycle (size > 1, or a self
/// loop), each listed in graph order. Tarjan's algorithm over dependency edges.
fn cycles(graph: &VerificationGraph, index: &HashMap<&NodeId, usize>) -> Vec<Vec<NodeId>> {
    struct Tarjan {
        adj: Vec<Vec<usize>>,
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<Vec<usize>>,
    }

    impl Tarjan {
        fn visit(&mut self, v: usize) {
            self.index[v] = Some(self.next);
            self.low[v] = self.next;
            self.next += 1;
            self.stack.push(v);
            self.on_stack[v] = true;
            for i in 0..self.adj[v].len() {
                let w = self.adj[v][i];
                match self.index[w] {
                    None => {
                        self.visit(w);
                        self.low[v] = self.low[v].min(self.low[w]);
                    }
                    Some(wi) if self.on_stack[w] => self.low[v] = self.low[v].min(wi),
                    Some(_) => {}
                }
            }
            if Some(self.low[v]) == self.index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = self.stack.pop().expect("stack holds v");
                    self.on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                let self_loop = comp.len() == 1 && self.adj[v].contains(&v);
                if comp.len() > 1 || self_loop {
                    comp.sort_unstable();
                    self.out.push(comp);
                }
            }
        }
    }

    let n = graph.nodes.len();
    let adj: Vec<Vec<usize>> = graph
        .nodes
        .iter()
        .map(|node| {
            node.dependencies
                .iter()
                .filter_map(|d| index.get(d).copied())
                .collect()
        })
        .collect();
    let mut t = Tarjan {
        adj,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if t.index[v].is_none() {
            t.visit(v);
        }
    }
    let mut out: Vec<Vec<NodeId>> = t
        .out
        .into_iter()
        .map(|c| c.into_iter().map(|i| graph.nodes[i].id.clone()).collect())
        .collect();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::graph::{Mode, Node};

    fn g(nodes: Vec<Node>) -> VerificationGraph {
        VerificationGraph::new("c", Mode::Static, nodes)
    }

    #[test]
    fn unresolved_dependency_is_reported() {
        let graph = g(vec![
            Node::new("n1", NodeType::Search, "q"),
            Node::new("n2", NodeType::Judge, "c").depends_on(["n1", "nX"]),
        ]);
        let report = validate(&graph);
        assert_eq!(report.to_string(), "unresolved dependency nX at n2");
    }

    #[test]
    fn two_cycle_is_reported() {
        let graph = g(vec![
            Node::new("n1", NodeType::Think, "a").depends_on(["n2"]),
            Node::new("n2", NodeType::Think, "b").depends_on(["n1"]),
            Node::new("j", NodeType::Judge, "c").depends_on(["n2"]),
        ]);
        let report = validate(&graph);
        assert_eq!(
            report.violations,
            vec![Violation::Cycle(vec!["n1".into(), "n2".into()])]
        );
        assert_eq!(report.to_string(), "cycle {n1,n2}");
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let graph = g(vec![Node::new("j", NodeType::Judge, "c").depends_on(["j"])]);
        assert!(validate(&graph)
            .violations
            .contains(&Violation::Cycle(vec!["j".into()])));
    }

    #[test]
    fn small_plan_is_ok() {
        let graph = g(vec![
            Node::new("s1", NodeType::Search, "q1"),
            Node::new("s2", NodeType::Search, "q2"),
            Node::new("t", NodeType::Think, "r").depends_on(["s1"]),
            Node::new("j", NodeType::Judge, "c").depends_on(["t", "s2"]),
        ]);
        let report = validate(&graph);
        assert!(report.is_ok(), "{report}");
        // idempotent
        assert_eq!(validate(&graph), report);
    }

    #[test]
    fn terminal_judge_rules() {
        let none = g(vec![Node::new("s", NodeType::Search, "q")]);
        assert_eq!(validate(&none).violations, vec![Violation::NoTerminalJudge]);
        let two = g(vec![
            Node::new("s", NodeType::Search, "q"),
            Node::new("j1", NodeType::Judge, "c").depends_on(["s"]),
            Node::new("j2", NodeType::Judge, "c").depends_on(["s"]),
        ]);
        assert!(matches!(
            validate(&two).violations.as_slice(),
            [Violation::MultipleTerminalJudges(_)]
        ));
    }

    #[test]
    fn two_refine_parents_rejected() {
        let graph = g(vec![
            Node::new("s", NodeType::Search, "q"),
            Node::new("r1", NodeType::Refine, "a").depends_on(["s"]),
            Node::new("r2", NodeType::Refine, "b").depends_on(["s"]),
            Node::new("j", NodeType::Judge, "c").depends_on(["r1", "r2"]),
        ]);
        assert_eq!(
            validate(&graph).to_string(),
            "multiple REFINE parents {r1,r2} at j"
        );
    }

    #[test]
    fn duplicate_ids_and_deps() {
        let graph = g(vec![
            Node::new("a", NodeType::Search, "q"),
            Node::new("a", NodeType::Search, "q"),
            Node::new("j", NodeType::Judge, "c").depends_on(["a", "a"]),
        ]);
        let v = validate(&graph).violations;
        assert!(v.contains(&Violation::DuplicateId("a".into())));
        assert!(v.contains(&Violation::DuplicateDependency {
            node: "j".into(),
            dependency: "a".into()
        }));
    }

    #[test]
    fn output_must_match_status() {
        let mut graph = diamond();
        graph.nodes[0].output = Some("stray".into());
        assert_eq!(
            validate(&graph).violations,
            vec![Violation::OutputStatus {
                node: "a".into(),
                status: NodeStatus::Pending
            }]
        );
    }

    #[test]
    fn subtree_shape() {
        let sub = g(vec![
            Node::new("s", NodeType::Search, "q"),
            Node::new("t", NodeType::Think, "r").depends_on(["s"]),
        ]);
        let think = ValidationRules {
            shape: Shape::Subtree {
                sink: NodeType::Think,
            },
            budget: None,
        };
        assert!(validate_with(&sub, &think).is_ok());
        let judge = ValidationRules {
            shape: Shape::Subtree {
                sink: NodeType::Judge,
            },
            budget: None,
        };
        assert!(matches!(
            validate_with(&sub, &judge).violations.as_slice(),
            [Violation::SinkType { .. }]
        ));
    }

    #[test]
    fn budget_rule() {
        let mut graph = diamond();
        graph.modification_count = 4;
        let rules = ValidationRules {
            shape: Shape::Plan,
            budget: Some(3),
        };
        assert_eq!(
            validate_with(&graph, &rules).violations,
            vec![Violation::BudgetExceeded {
                count: 4,
                budget: 3
            }]
        );
    }
}
