//! Drives one claim to a verdict. A single coordinator owns the graph; node
//! operations run as tokio tasks and report back over a join set, so every
//! graph mutation happens on the coordinator between dispatch rounds.

mod events;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::task::JoinSet;

use events::ObservedGateway;
pub use events::{Event, EventKind, EventLog};

use crate::gateway::Gateway;
use crate::graph::{
    assemble_input, graft, ready_frontier, validate, GraftMode, GraftOptions, GraphError, Mode,
    NodeId, NodeInput, NodeStatus, NodeType, TypeCounts, VerificationGraph,
};
use crate::nodes::{Label, NodeError, NodeOps, Outcome, Verdict};
use crate::planner::{FailureContext, PlanConstraints, Planner, PlannerError};
use crate::prompts::Prompts;
use crate::retrieval::{merge_evidence, EvidenceSet, Retriever, Strategy, DEFAULT_TOP_K};

pub const DEFAULT_BUDGET: u32 = 3;
pub const DEFAULT_MAX_INFLIGHT: usize = 4;
pub const DEFAULT_NODE_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub budget: u32,
    pub max_inflight: usize,
    pub node_timeout_ms: u64,
    pub strategy: Strategy,
    pub graft_mode: GraftMode,
    pub top_k: usize,
}

impl RunConfig {
    pub fn static_mode() -> Self {
        Self {
            mode: Mode::Static,
            budget: 0,
            max_inflight: DEFAULT_MAX_INFLIGHT,
            node_timeout_ms: DEFAULT_NODE_TIMEOUT.as_millis() as u64,
            strategy: Strategy::Wiki,
            graft_mode: GraftMode::Rewire,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn dynamic_mode() -> Self {
        Self {
            mode: Mode::Dynamic,
            budget: DEFAULT_BUDGET,
            strategy: Strategy::Web,
            ..Self::static_mode()
        }
    }

    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Static => Self::static_mode(),
            Mode::Dynamic => Self::dynamic_mode(),
        }
    }

    pub fn node_timeout(&self) -> Duration {
        Duration::from_millis(self.node_timeout_ms)
    }

    pub fn check(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if self.mode == Mode::Static && self.budget != 0 {
            return bad("static mode runs without modifications; budget must be 0");
        }
        if self.mode == Mode::Static && self.strategy != Strategy::Wiki {
            return bad("static mode retrieves from the local corpus; strategy must be WIKI");
        }
        if self.max_inflight == 0 {
            return bad("max_inflight must be at least 1");
        }
        if self.node_timeout_ms == 0 {
            return bad("node timeout must be positive");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        Ok(())
    }
}

/// Deterministic run statistics. Timing is kept out of the serialized form so
/// that replaying a run reproduces its result byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub initial_counts: TypeCounts,
    pub final_counts: TypeCounts,
    pub modification_count: u32,
    pub nodes_executed: u32,
    pub gateway_calls: u32,
    pub planner_calls: u32,
    pub fallback_plans: u32,
    pub forced_judgment: bool,
    #[serde(skip)]
    pub wall_ms: u64,
    #[serde(skip)]
    pub node_latency_ms: BTreeMap<NodeId, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub claim: String,
    pub verdict: Verdict,
    pub stats: RunStats,
    pub final_graph: VerificationGraph,
    #[serde(skip)]
    pub events: Vec<Event>,
}

impl RunResult {
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes") + "\n"
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("run aborted at {node}: {source}")]
    Fatal {
        node: NodeId,
        #[source]
        source: NodeError,
    },
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph bookkeeping failed: {0}")]
    Graph(#[from] GraphError),
}

/// Runs claims; holds no per-run state, so one engine may serve many claims
/// concurrently.
#[derive(Clone)]
pub struct Engine {
    gateway: Arc<dyn Gateway>,
    retriever: Arc<dyn Retriever>,
    prompts: Arc<Prompts>,
    config: RunConfig,
    constraints: PlanConstraints,
}

impl Engine {
    pub fn new(
        gateway: Arc<dyn Gateway>,
        retriever: Arc<dyn Retriever>,
        prompts: Arc<Prompts>,
        config: RunConfig,
    ) -> Result<Self, RunError> {
        config.check()?;
        Ok(Self {
            gateway,
            retriever,
            prompts,
            config,
            constraints: PlanConstraints::default(),
        })
    }

    pub fn with_plan_constraints(mut self, constraints: PlanConstraints) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub async fn run_claim(&self, claim: &str) -> Result<RunResult, RunError> {
        self.run_claim_logged(claim, Arc::new(EventLog::new()))
            .await
    }

    pub async fn run_claim_logged(
        &self,
        claim: &str,
        log: Arc<EventLog>,
    ) -> Result<RunResult, RunError> {
        let mut run = Run::new(self, claim, log);
        let plan = run.planner.initial(claim, self.config.mode).await?;
        run.planner_calls += plan.calls;
        run.fallback_plans += u32::from(plan.fallback_used);
        run.log.emit(
            EventKind::Plan,
            None,
            json!({"nodes": plan.graph.nodes.len(), "fallback_used": plan.fallback_used, "calls": plan.calls}),
        );
        run.execute(plan.graph).await
    }

    /// Executes a ready-made plan, skipping initial planning.
    pub async fn run_graph(&self, graph: VerificationGraph) -> Result<RunResult, RunError> {
        self.run_graph_logged(graph, Arc::new(EventLog::new()))
            .await
    }

    pub async fn run_graph_logged(
        &self,
        graph: VerificationGraph,
        log: Arc<EventLog>,
    ) -> Result<RunResult, RunError> {
        let report = validate(&graph);
        if !report.is_ok() {
            return Err(RunError::InvalidGraph(report.to_string()));
        }
        if graph.nodes.iter().any(|n| n.status != NodeStatus::Pending) {
            return Err(RunError::InvalidGraph(
                "every node must start PENDING".into(),
            ));
        }
        let claim = graph.claim.clone();
        Run::new(self, &claim, log).execute(graph).await
    }
}

/// Starts up to `max_inflight - running` frontier nodes, moving each
/// PENDING -> READY -> RUNNING, and returns them in frontier order.
pub fn dispatch_frontier(
    graph: &mut VerificationGraph,
    running: usize,
    max_inflight: usize,
) -> Result<Vec<NodeId>, GraphError> {
    let slots = max_inflight.saturating_sub(running);
    let started: Vec<NodeId> = ready_frontier(graph).into_iter().take(slots).collect();
    for id in &started {
        graph.transition(id, NodeStatus::Ready)?;
        graph.transition(id, NodeStatus::Running)?;
    }
    Ok(started)
}

/// Input for a forced judgment: the JUDGE's own instruction over every output
/// and every piece of evidence gathered so far.
pub fn all_evidence_input(
    graph: &VerificationGraph,
    judge: &NodeId,
) -> Result<NodeInput, GraphError> {
    let node = graph
        .node(judge)
        .ok_or_else(|| GraphError::UnknownNode(judge.clone()))?;
    let parent_outputs = graph
        .nodes
        .iter()
        .filter(|n| n.id != *judge && n.status == NodeStatus::Done)
        .filter_map(|n| n.output.clone().map(|o| (n.id.clone(), o)))
        .collect();
    let parent_evidence = merge_evidence(graph.nodes.iter().map(|n| &n.evidence));
    Ok(NodeInput {
        original: node.input.clone(),
        parent_outputs,
        parent_evidence,
        hint: node.hint.clone(),
    })
}

enum Failure {
    Op(NodeError),
    Timeout(Duration),
}

struct Finished {
    id: NodeId,
    node_type: NodeType,
    input: NodeInput,
    forced: bool,
    result: Result<Outcome, Failure>,
    latency_ms: u64,
}

struct Run {
    ops: NodeOps,
    planner: Planner,
    gateway: Arc<ObservedGateway>,
    config: RunConfig,
    log: Arc<EventLog>,
    claim: String,
    inflight: JoinSet<Finished>,
    /// JUDGE that must run forced once it becomes ready.
    force_judge: Option<NodeId>,
    verdict: Option<Verdict>,
    forced_judgment: bool,
    nodes_executed: u32,
    planner_calls: u32,
    fallback_plans: u32,
    latency: BTreeMap<NodeId, u64>,
    started: Instant,
}

impl Run {
    fn new(engine: &Engine, claim: &str, log: Arc<EventLog>) -> Self {
        let gateway = Arc::new(ObservedGateway::new(engine.gateway.clone(), log.clone()));
        let shared: Arc<dyn Gateway> = gateway.clone();
        let mut ops = NodeOps::new(
            shared.clone(),
            engine.retriever.clone(),
            engine.prompts.clone(),
            engine.config.mode,
        );
        ops.top_k = engine.config.top_k;
        Self {
            ops,
            planner: Planner::new(shared, engine.prompts.clone())
                .with_constraints(engine.constraints.clone()),
            gateway,
            config: engine.config.clone(),
            log,
            claim: claim.to_string(),
            inflight: JoinSet::new(),
            force_judge: None,
            verdict: None,
            forced_judgment: false,
            nodes_executed: 0,
            planner_calls: 0,
            fallback_plans: 0,
            latency: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    async fn execute(mut self, mut graph: VerificationGraph) -> Result<RunResult, RunError> {
        graph.mode = self.config.mode;
        let initial_counts = graph.type_counts();
        self.log.emit(
            EventKind::RunStart,
            None,
            json!({"claim": self.claim, "mode": self.config.mode, "budget": self.config.budget}),
        );

        while self.verdict.is_none() || !self.inflight.is_empty() {
            if self.verdict.is_none() {
                let started =
                    dispatch_frontier(&mut graph, self.inflight.len(), self.config.max_inflight)?;
                for id in started {
                    let forced = self.force_judge.as_ref() == Some(&id);
                    let input = if forced {
                        all_evidence_input(&graph, &id)?
                    } else {
                        assemble_input(&graph, &id)?
                    };
                    self.spawn(&graph, id, input, forced);
                }
                if self.inflight.is_empty() {
                    self.start_forced_judgment(&mut graph)?;
                }
            }
            let Some(joined) = self.inflight.join_next().await else {
                break;
            };
            let finished = joined.expect("node task panicked");
            self.settle(&mut graph, finished).await?;
        }

        let verdict = self.verdict.take().expect("loop exits with a verdict");
        self.log.emit(
            EventKind::RunFinish,
            None,
            json!({"label": verdict.label, "forced": verdict.forced}),
        );
        let stats = RunStats {
            initial_counts,
            final_counts: graph.type_counts(),
            modification_count: graph.modification_count,
            nodes_executed: self.nodes_executed,
            gateway_calls: self.gateway.calls(),
            planner_calls: self.planner_calls,
            fallback_plans: self.fallback_plans,
            forced_judgment: self.forced_judgment,
            wall_ms: self.started.elapsed().as_millis() as u64,
            node_latency_ms: std::mem::take(&mut self.latency),
        };
        Ok(RunResult {
            claim: self.claim.clone(),
            verdict,
            stats,
            final_graph: graph,
            events: self.log.events(),
        })
    }

    fn spawn(&mut self, graph: &VerificationGraph, id: NodeId, input: NodeInput, forced: bool) {
        let node_type = graph.node(&id).expect("dispatched node exists").node_type;
        self.nodes_executed += 1;
        self.log.emit(
            EventKind::NodeStart,
            Some(&id),
            json!({"type": node_type, "forced": forced}),
        );
        let ops = self.ops.clone();
        let timeout = self.config.node_timeout();
        self.inflight.spawn(async move {
            let t0 = Instant::now();
            let result =
                match tokio::time::timeout(timeout, ops.execute(node_type, &input, forced)).await {
                    Ok(Ok(outcome)) => Ok(outcome),
                    Ok(Err(e)) => Err(Failure::Op(e)),
                    Err(_) => Err(Failure::Timeout(timeout)),
                };
            Finished {
                id,
                node_type,
                input,
                forced,
                result,
                latency_ms: t0.elapsed().as_millis() as u64,
            }
        });
    }

    /// Nothing is running and nothing can start: judge now, forced, over all
    /// evidence gathered so far.
    fn start_forced_judgment(&mut self, graph: &mut VerificationGraph) -> Result<(), RunError> {
        let judge = graph
            .terminal_judge()
            .ok_or_else(|| RunError::InvalidGraph("graph has no terminal JUDGE".into()))?;
        self.log.emit(
            EventKind::ForcedJudgment,
            Some(&judge),
            json!({"status": graph.node(&judge).map(|n| n.status)}),
        );
        self.rerun_forced(graph, judge)
    }

    fn rerun_forced(
        &mut self,
        graph: &mut VerificationGraph,
        judge: NodeId,
    ) -> Result<(), RunError> {
        graph.reopen_for_forced_judgment(&judge)?;
        graph.transition(&judge, NodeStatus::Running)?;
        let input = all_evidence_input(graph, &judge)?;
        self.force_judge = Some(judge.clone());
        self.spawn(graph, judge, input, true);
        Ok(())
    }

    async fn settle(
        &mut self,
        graph: &mut VerificationGraph,
        done: Finished,
    ) -> Result<(), RunError> {
        let Finished {
            id,
            node_type,
            input,
            forced,
            result,
            latency_ms,
        } = done;
        self.latency.insert(id.clone(), latency_ms);
        let failure_reason = match result {
            Ok(Outcome::Search(o)) => {
                self.finish(graph, &id, node_type, o.output, o.evidence)?;
                None
            }
            Ok(Outcome::Refine(q)) => {
                self.finish(graph, &id, node_type, q, input.parent_evidence.clone())?;
                None
            }
            Ok(Outcome::Think(t)) => match (t.sufficient, t.conclusion) {
                (true, Some(conclusion)) => {
                    self.finish(
                        graph,
                        &id,
                        node_type,
                        conclusion,
                        input.parent_evidence.clone(),
                    )?;
                    None
                }
                (_, _) => Some(format!(
                    "insufficient evidence: {}",
                    t.missing.unwrap_or_else(|| "unspecified".into())
                )),
            },
            Ok(Outcome::Judge(v)) if v.label != Label::Uncertain => {
                self.finish(
                    graph,
                    &id,
                    node_type,
                    v.output_text(),
                    input.parent_evidence.clone(),
                )?;
                if graph.dependents(&id).is_empty() {
                    self.forced_judgment |= v.forced;
                    self.verdict = Some(v);
                }
                None
            }
            Ok(Outcome::Judge(v)) => Some(format!("verdict uncertain: {}", v.explanation)),
            Err(Failure::Op(e)) if e.is_fatal() => {
                return Err(RunError::Fatal {
                    node: id,
                    source: e,
                })
            }
            Err(Failure::Op(e)) => Some(e.to_string()),
            Err(Failure::Timeout(t)) => Some(format!("timed out after {} ms", t.as_millis())),
        };
        let Some(reason) = failure_reason else {
            return Ok(());
        };

        if forced {
            // A forced judgment always ends the run with a binary label.
            let verdict = Verdict {
                label: Label::Refutes,
                explanation: format!("No verdict could be obtained ({reason}); defaulted."),
                forced: true,
            };
            self.finish(
                graph,
                &id,
                node_type,
                verdict.output_text(),
                input.parent_evidence.clone(),
            )?;
            self.forced_judgment = true;
            self.verdict = Some(verdict);
            return Ok(());
        }

        graph.fail(&id, input.parent_evidence.clone())?;
        self.log.emit(
            EventKind::NodeFailed,
            Some(&id),
            json!({"type": node_type, "reason": reason}),
        );
        if self.verdict.is_some() {
            return Ok(());
        }
        self.handle_failure(graph, &id, node_type, input, reason)
            .await
    }

    fn finish(
        &mut self,
        graph: &mut VerificationGraph,
        id: &NodeId,
        node_type: NodeType,
        output: String,
        evidence: EvidenceSet,
    ) -> Result<(), RunError> {
        let output = if output.trim().is_empty() {
            format!("{node_type} step produced no text")
        } else {
            output
        };
        graph.complete(id, output, evidence)?;
        self.log.emit(
            EventKind::NodeFinish,
            Some(id),
            json!({"type": node_type, "evidence": graph.node(id).map(|n| n.evidence.len())}),
        );
        Ok(())
    }

    async fn handle_failure(
        &mut self,
        graph: &mut VerificationGraph,
        failed: &NodeId,
        node_type: NodeType,
        input: NodeInput,
        reason: String,
    ) -> Result<(), RunError> {
        if graph.modification_count < self.config.budget {
            let failure = FailureContext {
                node_id: failed.clone(),
                node_type,
                input,
                reason: reason.clone(),
            };
            for attempt in 1..=2 {
                let plan = self
                    .planner
                    .subtree(&self.claim, self.config.mode, failure.clone())
                    .await?;
                self.planner_calls += plan.calls;
                self.fallback_plans += u32::from(plan.fallback_used);
                let mut trial = graph.clone();
                let skipped = trial.skip_descendants(failed, None)?;
                let opts = GraftOptions {
                    budget: self.config.budget,
                    mode: self.config.graft_mode,
                };
                match graft(&trial, failed, &plan.graph, opts) {
                    Ok(next) => {
                        if !skipped.is_empty() {
                            self.log.emit(
                                EventKind::Skip,
                                Some(failed),
                                json!({ "nodes": skipped }),
                            );
                        }
                        let added: Vec<&NodeId> = next.nodes[graph.nodes.len()..]
                            .iter()
                            .map(|n| &n.id)
                            .collect();
                        self.log.emit(
                            EventKind::Graft,
                            Some(failed),
                            json!({
                                "round": next.modification_count,
                                "added": added,
                                "fallback_used": plan.fallback_used,
                            }),
                        );
                        *graph = next;
                        return Ok(());
                    }
                    Err(e) => {
                        self.log.emit(
                            EventKind::GraftRejected,
                            Some(failed),
                            json!({"attempt": attempt, "error": e.to_string()}),
                        );
                    }
                }
            }
        }

        self.log.emit(
            EventKind::BudgetExhausted,
            Some(failed),
            json!({"modification_count": graph.modification_count, "budget": self.config.budget}),
        );
        let is_terminal_judge = node_type == NodeType::Judge && graph.dependents(failed).is_empty();
        if is_terminal_judge {
            return self.rerun_forced(graph, failed.clone());
        }
        let terminal = graph.terminal_judge();
        let skipped = graph.skip_descendants(failed, terminal.as_ref())?;
        if !skipped.is_empty() {
            self.log
                .emit(EventKind::Skip, Some(failed), json!({ "nodes": skipped }));
        }
        self.force_judge = terminal;
        Ok(())
    }
}
