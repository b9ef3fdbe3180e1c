use std::collections::{BTreeSet, HashSet, VecDeque};

use proptest::prelude::*;

use factgraph_core::graph::{
    descendants, graft, ready_frontier, validate, GraftMode, GraftOptions, GraphError, Mode, Node,
    NodeId, NodeStatus, NodeType, VerificationGraph,
};

/// Plan with `types.len()` steps whose edges come from `edges` (i < j pairs) and
/// a terminal JUDGE over every sink. REFINE steps never feed into anything, so
/// the one-REFINE-parent rule always holds.
fn plan(types: &[NodeType], edges: &[(usize, usize)]) -> VerificationGraph {
    let n = types.len();
    let mut deps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        let (i, j) = (a.min(b), a.max(b));
        if i != j && j < n && types[i] != NodeType::Refine {
            deps[j].insert(i);
        }
    }
    let fed: HashSet<usize> = deps.iter().flatten().copied().collect();
    let mut nodes: Vec<Node> = (0..n)
        .map(|j| {
            Node::new(format!("n{j}"), types[j], format!("step {j}"))
                .depends_on(deps[j].iter().map(|i| format!("n{i}")))
        })
        .collect();
    let mut sinks: Vec<String> = (0..n)
        .filter(|i| !fed.contains(i) && types[*i] != NodeType::Refine)
        .map(|i| format!("n{i}"))
        .collect();
    if let Some(r) = (0..n).find(|i| types[*i] == NodeType::Refine && !fed.contains(i)) {
        sinks.push(format!("n{r}"));
    }
    nodes.push(Node::new("judge", NodeType::Judge, "claim").depends_on(sinks));
    VerificationGraph::new("claim", Mode::Dynamic, nodes)
}

fn node_type() -> impl Strategy<Value = NodeType> {
    prop::sample::select(NodeType::ALL.to_vec())
}

fn arb_plan() -> impl Strategy<Value = VerificationGraph> {
    (1usize..=11)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(node_type(), n),
                prop::collection::vec((0..n, 0..n), 0..(n * 2)),
            )
        })
        .prop_map(|(types, edges)| plan(&types, &edges))
}

fn status() -> impl Strategy<Value = NodeStatus> {
    prop::sample::select(vec![
        NodeStatus::Pending,
        NodeStatus::Done,
        NodeStatus::Failed,
        NodeStatus::Skipped,
        NodeStatus::Running,
    ])
}

fn frontier_oracle(g: &VerificationGraph) -> Vec<NodeId> {
    let mut out = Vec::new();
    for n in &g.nodes {
        if n.status != NodeStatus::Pending {
            continue;
        }
        let mut ok = true;
        for d in &n.dependencies {
            let parent = g.nodes.iter().find(|m| &m.id == d).unwrap();
            if parent.status != NodeStatus::Done && parent.status != NodeStatus::Failed {
                ok = false;
            }
        }
        if ok {
            out.push(n.id.clone());
        }
    }
    out
}

fn descendants_oracle(g: &VerificationGraph, id: &NodeId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let mut queue = VecDeque::from([id.clone()]);
    while let Some(cur) = queue.pop_front() {
        for n in &g.nodes {
            if n.dependencies.contains(&cur) && out.insert(n.id.clone()) {
                queue.push_back(n.id.clone());
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn generated_plans_validate(g in arb_plan()) {
        prop_assert!(validate(&g).is_ok(), "{}", validate(&g));
    }

    #[test]
    fn frontier_matches_oracle(g in arb_plan(), statuses in prop::collection::vec(status(), 12)) {
        let mut g = g;
        for (n, s) in g.nodes.iter_mut().zip(statuses) {
            n.status = s;
        }
        prop_assert_eq!(ready_frontier(&g), frontier_oracle(&g));
    }

    #[test]
    fn descendants_match_oracle(g in arb_plan(), pick in any::<prop::sample::Index>()) {
        let id = g.nodes[pick.index(g.nodes.len())].id.clone();
        prop_assert_eq!(descendants(&g, &id).unwrap(), descendants_oracle(&g, &id));
    }

    #[test]
    fn canonical_json_round_trips(g in arb_plan()) {
        let json = g.to_canonical_json();
        let back = VerificationGraph::from_json(&json).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(back.to_canonical_json(), json);
    }

    #[test]
    fn graft_namespaces_and_counts(g in arb_plan(), pick in any::<prop::sample::Index>(), rewire in any::<bool>()) {
        let mut g = g;
        let candidates: Vec<usize> = (0..g.nodes.len()).filter(|&i| g.nodes[i].node_type != NodeType::Judge).collect();
        prop_assume!(!candidates.is_empty());
        let idx = candidates[pick.index(candidates.len())];
        let failed = g.nodes[idx].id.clone();
        let below = descendants_oracle(&g, &failed);
        for n in g.nodes.iter_mut() {
            if n.id != failed && !below.contains(&n.id) {
                n.status = NodeStatus::Done;
                n.output = Some("done".into());
            }
        }
        let sink = g.nodes[idx].node_type;
        g.nodes[idx].status = NodeStatus::Failed;
        let sub = VerificationGraph::new(
            "claim",
            Mode::Dynamic,
            vec![
                Node::new("a", NodeType::Search, "more"),
                Node::new("b", sink, "retry").depends_on(["a"]),
            ],
        );
        let mode = if rewire { GraftMode::Rewire } else { GraftMode::Replace };
        let out = graft(&g, &failed, &sub, GraftOptions { budget: 3, mode }).unwrap();
        prop_assert_eq!(out.modification_count, 1);
        prop_assert_eq!(out.nodes.len(), g.nodes.len() + 2);
        prop_assert!(out.node(&"m1/a".into()).unwrap().dependencies == vec![failed.clone()]);
        prop_assert!(validate(&out).is_ok(), "{}", validate(&out));
        let dependents_of_failed: Vec<&Node> = out.nodes.iter().filter(|n| n.dependencies.contains(&failed)).collect();
        if rewire {
            prop_assert!(dependents_of_failed.iter().all(|n| n.id.as_str() == "m1/a"));
        }
        let mut exhausted = out.clone();
        exhausted.modification_count = 3;
        let again = graft(&exhausted, &failed, &sub, GraftOptions { budget: 3, mode });
        prop_assert_eq!(again, Err(GraphError::BudgetExhausted { budget: 3 }));
    }
}
