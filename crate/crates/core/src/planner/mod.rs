//! Builds verification plans by prompting the model for a JSON node array,
//! repairing malformed answers, and falling back to a fixed template.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, GatewayRequest, Role};
use crate::graph::{
    validate_with, Mode, Node, NodeId, NodeInput, NodeType, Shape, ValidationRules,
    VerificationGraph,
};
use crate::prompts::{format_context, render, Prompts};

pub const DEFAULT_MAX_NODES: usize = 12;
pub const REPAIR_ATTEMPTS: u32 = 2;

/// Wire format shared by every plan prompt.
pub const PLAN_SCHEMA: &str = r#"Output format: a JSON array of node objects. Each object has
  "id": a short unique string without "/", for example "s1"
  "type": one of "SEARCH", "REFINE", "THINK", "JUDGE"
  "input": the instruction for this step
  "hint": extra guidance for this step, may be ""
  "dependencies": ids of the steps that must finish first, may be []"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PlanPurpose {
    Initial,
    Subtree,
}

/// The step a sub-graph replaces and why it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureContext {
    pub node_id: NodeId,
    pub node_type: NodeType,
    pub input: NodeInput,
    pub reason: String,
}

impl FailureContext {
    fn render(&self) -> String {
        let mut out = format!(
            "id: {}\ntype: {}\ninstruction: {}\n",
            self.node_id, self.node_type, self.input.original
        );
        if !self.input.hint.is_empty() {
            out.push_str(&format!("hint: {}\n", self.input.hint));
        }
        out.push_str(&format!("problem: {}\n\n", self.reason));
        out.push_str(&format_context(&self.input));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanConstraints {
    pub max_nodes: usize,
    pub allowed_types: Vec<NodeType>,
}

impl Default for PlanConstraints {
    fn default() -> Self {
        Self {
            max_nodes: DEFAULT_MAX_NODES,
            allowed_types: NodeType::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub claim: String,
    pub purpose: PlanPurpose,
    pub failure_context: Option<FailureContext>,
    pub constraints: PlanConstraints,
    pub mode: Mode,
}

impl PlanRequest {
    pub fn initial(claim: impl Into<String>, mode: Mode) -> Self {
        Self {
            claim: claim.into(),
            purpose: PlanPurpose::Initial,
            failure_context: None,
            constraints: PlanConstraints::default(),
            mode,
        }
    }

    pub fn subtree(claim: impl Into<String>, mode: Mode, failure: FailureContext) -> Self {
        Self {
            claim: claim.into(),
            purpose: PlanPurpose::Subtree,
            failure_context: Some(failure),
            constraints: PlanConstraints::default(),
            mode,
        }
    }

    pub fn with_constraints(mut self, constraints: PlanConstraints) -> Self {
        self.constraints = constraints;
        self
    }

    fn shape(&self) -> Shape {
        match &self.failure_context {
            Some(f) => Shape::Subtree { sink: f.node_type },
            None => Shape::Plan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlanParseErrorKind {
    NotParseable,
    SchemaViolation,
    GraphInvalid,
}

impl fmt::Display for PlanParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NotParseable => "NOT_PARSEABLE",
            Self::SchemaViolation => "SCHEMA_VIOLATION",
            Self::GraphInvalid => "GRAPH_INVALID",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind}: {detail}")]
pub struct PlanParseError {
    pub kind: PlanParseErrorKind,
    pub detail: String,
}

impl PlanParseError {
    fn new(kind: PlanParseErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }

    fn schema(detail: impl Into<String>) -> Self {
        Self::new(PlanParseErrorKind::SchemaViolation, detail)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("planner unavailable: {0}")]
    Unavailable(#[source] GatewayError),
    #[error("invalid plan request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub graph: VerificationGraph,
    pub fallback_used: bool,
    pub calls: u32,
    /// Why each rejected answer was rejected, in call order.
    pub rejections: Vec<PlanParseError>,
}

pub fn build_plan_prompt(request: &PlanRequest, prompts: &Prompts) -> String {
    let max_nodes = request.constraints.max_nodes.to_string();
    match &request.failure_context {
        None => {
            let claim_json = serde_json::to_string(&request.claim).expect("string serializes");
            render(
                &prompts.plan_initial,
                &[
                    ("schema", PLAN_SCHEMA),
                    ("max_nodes", &max_nodes),
                    ("claim_json", &claim_json),
                    ("claim", &request.claim),
                ],
            )
        }
        Some(failure) => render(
            &prompts.plan_subtree,
            &[
                ("schema", PLAN_SCHEMA),
                ("max_nodes", &max_nodes),
                ("sink_type", failure.node_type.as_str()),
                ("claim", &request.claim),
                ("failure_context", &failure.render()),
            ],
        ),
    }
}

/// Parses a full plan with default constraints.
pub fn parse_plan(raw: &str, claim: &str, mode: Mode) -> Result<VerificationGraph, PlanParseError> {
    parse_for(raw, &PlanRequest::initial(claim, mode))
}

/// Parses an answer to `request`: a full plan or a sub-graph, per its purpose.
pub fn parse_for(raw: &str, request: &PlanRequest) -> Result<VerificationGraph, PlanParseError> {
    let Some(entries) = first_json_array(raw) else {
        return Err(PlanParseError::new(
            PlanParseErrorKind::NotParseable,
            "no JSON array found in the answer",
        ));
    };
    if entries.is_empty() {
        return Err(PlanParseError::schema("plan has no nodes"));
    }
    let limits = &request.constraints;
    if entries.len() > limits.max_nodes {
        return Err(PlanParseError::schema(format!(
            "plan has {} nodes, at most {} allowed",
            entries.len(),
            limits.max_nodes
        )));
    }
    let nodes = entries
        .iter()
        .enumerate()
        .map(|(i, e)| node_from_value(i, e, &limits.allowed_types))
        .collect::<Result<Vec<_>, _>>()?;
    let graph = VerificationGraph::new(request.claim.clone(), request.mode, nodes);
    let report = validate_with(
        &graph,
        &ValidationRules {
            shape: request.shape(),
            budget: None,
        },
    );
    if !report.is_ok() {
        return Err(PlanParseError::new(
            PlanParseErrorKind::GraphInvalid,
            report.to_string(),
        ));
    }
    Ok(graph)
}

/// The first array in `raw`, preferring one whose elements are all objects.
fn first_json_array(raw: &str) -> Option<Vec<Value>> {
    let mut first_any = None;
    for (i, _) in raw.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            if !items.is_empty() && items.iter().all(Value::is_object) {
                return Some(items);
            }
            first_any.get_or_insert(items);
        }
    }
    first_any
}

fn node_from_value(
    index: usize,
    value: &Value,
    allowed: &[NodeType],
) -> Result<Node, PlanParseError> {
    let err = |what: String| PlanParseError::schema(format!("node {index}: {what}"));
    let obj = value
        .as_object()
        .ok_or_else(|| err("not an object".into()))?;
    let text = |key: &str, required: bool| -> Result<String, PlanParseError> {
        match obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            None | Some(Value::Null) if !required => Ok(String::new()),
            None | Some(Value::Null) => Err(err(format!("missing \"{key}\""))),
            Some(_) => Err(err(format!("\"{key}\" must be a string"))),
        }
    };

    let id = text("id", true)?;
    if id.trim().is_empty() {
        return Err(err("empty \"id\"".into()));
    }
    if id.contains('/') {
        return Err(err(format!("id {id:?} uses the reserved \"/\" separator")));
    }
    let type_name = text("type", true)?;
    let node_type =
        NodeType::parse(&type_name).ok_or_else(|| err(format!("unknown type {type_name:?}")))?;
    if !allowed.contains(&node_type) {
        return Err(err(format!("type {node_type} is not allowed here")));
    }
    let input = text("input", true)?;
    if input.trim().is_empty() {
        return Err(err("empty \"input\"".into()));
    }
    let hint = text("hint", false)?;
    let dependencies = match obj.get("dependencies") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|d| {
                d.as_str()
                    .map(NodeId::from)
                    .ok_or_else(|| err("\"dependencies\" must hold strings".into()))
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(err("\"dependencies\" must be an array".into())),
    };
    Ok(Node::new(id, node_type, input)
        .with_hint(hint)
        .depends_on(dependencies))
}

/// Deterministic plan used once repair attempts run out.
pub fn fallback_plan(request: &PlanRequest) -> VerificationGraph {
    let nodes = match &request.failure_context {
        None => vec![
            Node::new("s1", NodeType::Search, request.claim.clone()),
            Node::new("j1", NodeType::Judge, request.claim.clone()).depends_on(["s1"]),
        ],
        Some(failure) => {
            let sink_id = match failure.node_type {
                NodeType::Search => "s2",
                NodeType::Refine => "r1",
                NodeType::Think => "t1",
                NodeType::Judge => "j1",
            };
            let query = if failure.reason.trim().is_empty() {
                failure.input.original.clone()
            } else {
                failure.reason.clone()
            };
            vec![
                Node::new("s1", NodeType::Search, query),
                Node::new(sink_id, failure.node_type, failure.input.original.clone())
                    .with_hint(failure.input.hint.clone())
                    .depends_on(["s1"]),
            ]
        }
    };
    VerificationGraph::new(request.claim.clone(), request.mode, nodes)
}

/// Prompts, parses and repairs; at most `1 + REPAIR_ATTEMPTS` model calls.
pub async fn generate_plan(
    request: &PlanRequest,
    gateway: &dyn Gateway,
    prompts: &Prompts,
) -> Result<Plan, PlannerError> {
    if request.claim.trim().is_empty() {
        return Err(PlannerError::InvalidRequest("claim is empty".into()));
    }
    if (request.purpose == PlanPurpose::Subtree) != request.failure_context.is_some() {
        return Err(PlannerError::InvalidRequest(
            "failure context must be present exactly for sub-graph requests".into(),
        ));
    }
    let base = build_plan_prompt(request, prompts);
    let mut rejections: Vec<PlanParseError> = Vec::new();
    let mut calls = 0;
    while calls <= REPAIR_ATTEMPTS {
        let prompt = match rejections.last() {
            None => base.clone(),
            Some(e) => format!(
                "{base}\n\nYour previous answer was rejected ({e}). Answer again with the corrected JSON array only."
            ),
        };
        calls += 1;
        let raw = gateway
            .complete(&GatewayRequest::new(Role::Planner, prompt))
            .await
            .map_err(PlannerError::Unavailable)?;
        match parse_for(&raw, request) {
            Ok(graph) => {
                return Ok(Plan {
                    graph,
                    fallback_used: false,
                    calls,
                    rejections,
                })
            }
            Err(e) => {
                tracing::debug!(attempt = calls, error = %e, "plan rejected");
                rejections.push(e);
            }
        }
    }
    tracing::warn!(purpose = ?request.purpose, "plan repair exhausted; using fallback");
    Ok(Plan {
        graph: fallback_plan(request),
        fallback_used: true,
        calls,
        rejections,
    })
}

/// A gateway plus templates; cheap to clone and share across runs.
#[derive(Clone)]
pub struct Planner {
    gateway: Arc<dyn Gateway>,
    prompts: Arc<Prompts>,
    constraints: PlanConstraints,
}

impl Planner {
    pub fn new(gateway: Arc<dyn Gateway>, prompts: Arc<Prompts>) -> Self {
        Self {
            gateway,
            prompts,
            constraints: PlanConstraints::default(),
        }
    }

    pub fn with_constraints(mut self, constraints: PlanConstraints) -> Self {
        self.constraints = constraints;
        self
    }

    pub async fn initial(&self, claim: &str, mode: Mode) -> Result<Plan, PlannerError> {
        let req = PlanRequest::initial(claim, mode).with_constraints(self.constraints.clone());
        generate_plan(&req, self.gateway.as_ref(), &self.prompts).await
    }

    pub async fn subtree(
        &self,
        claim: &str,
        mode: Mode,
        failure: FailureContext,
    ) -> Result<Plan, PlannerError> {
        let req =
            PlanRequest::subtree(claim, mode, failure).with_constraints(self.constraints.clone());
        generate_plan(&req, self.gateway.as_ref(), &self.prompts).await
    }
}
