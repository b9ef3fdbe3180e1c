//! The four node behaviors. Each is a pure function of its input, the model's
//! answers and the retriever's results.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, GatewayRequest, Role};
use crate::graph::{Mode, NodeInput, NodeType};
use crate::prompts::{format_context, render, Prompts};
use crate::retrieval::{merge_evidence, EvidenceSet, Retriever, SearchError, DEFAULT_TOP_K};

pub const UNPARSEABLE_REASONING: &str = "reasoning unparseable";

const REASK: &str = "\n\nYour previous reply could not be used. Reply with the JSON object only, exactly in the requested form.";
const REASK_BINARY: &str = "\n\nYour previous reply did not give a usable verdict. Reply with the JSON object only, and the label must be SUPPORTS or REFUTES.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Supports,
    Refutes,
    Uncertain,
}

impl Label {
    /// Accepts the usual spellings of each label, case-insensitively.
    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s
            .trim()
            .to_ascii_uppercase()
            .chars()
            .map(|c| if c.is_ascii_alphabetic() { c } else { '_' })
            .collect();
        match norm.trim_matches('_') {
            "SUPPORTS" | "SUPPORTED" | "SUPPORT" | "TRUE" => Some(Label::Supports),
            "REFUTES" | "REFUTED" | "REFUTE" | "FALSE" | "NOT_SUPPORTED" => Some(Label::Refutes),
            "UNCERTAIN" | "NEI" | "NOT_ENOUGH_INFO" | "NOT_ENOUGH_INFORMATION" | "UNKNOWN" => {
                Some(Label::Uncertain)
            }
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Supports => "SUPPORTS",
            Label::Refutes => "REFUTES",
            Label::Uncertain => "UNCERTAIN",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A forced verdict is never UNCERTAIN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub explanation: String,
    pub forced: bool,
}

impl Verdict {
    pub fn output_text(&self) -> String {
        if self.explanation.is_empty() {
            self.label.to_string()
        } else {
            format!("{}: {}", self.label, self.explanation)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkOutcome {
    pub sufficient: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conclusion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing: Option<String>,
}

impl ThinkOutcome {
    pub fn sufficient(conclusion: impl Into<String>) -> Self {
        Self {
            sufficient: true,
            conclusion: Some(conclusion.into()),
            missing: None,
        }
    }

    pub fn insufficient(missing: impl Into<String>) -> Self {
        Self {
            sufficient: false,
            conclusion: None,
            missing: Some(missing.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub query: String,
    /// This retrieval alone, at most k items.
    pub results: EvidenceSet,
    /// Parent evidence followed by the new results, duplicate-free.
    pub evidence: EvidenceSet,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NodeError {
    #[error("search failed: {0}")]
    SearchFailed(#[from] SearchError),
    #[error("REFINE step has no parent context to resolve references from")]
    RefinePrecondition,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl NodeError {
    /// Errors that invalidate the whole run rather than one node.
    pub fn is_fatal(&self) -> bool {
        match self {
            NodeError::Gateway(e) => e.is_fatal(),
            NodeError::SearchFailed(e) => matches!(e, SearchError::ReplayMiss { .. }),
            NodeError::RefinePrecondition => false,
        }
    }
}

/// What a finished node operation produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Search(SearchOutcome),
    Refine(String),
    Think(ThinkOutcome),
    Judge(Verdict),
}

/// Everything node operations need; cheap to clone into worker tasks.
#[derive(Clone)]
pub struct NodeOps {
    pub gateway: Arc<dyn Gateway>,
    pub retriever: Arc<dyn Retriever>,
    pub prompts: Arc<Prompts>,
    pub mode: Mode,
    pub top_k: usize,
}

impl NodeOps {
    pub fn new(
        gateway: Arc<dyn Gateway>,
        retriever: Arc<dyn Retriever>,
        prompts: Arc<Prompts>,
        mode: Mode,
    ) -> Self {
        Self {
            gateway,
            retriever,
            prompts,
            mode,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub async fn execute(
        &self,
        node_type: NodeType,
        input: &NodeInput,
        forced: bool,
    ) -> Result<Outcome, NodeError> {
        Ok(match node_type {
            NodeType::Search => Outcome::Search(self.search(input).await?),
            NodeType::Refine => Outcome::Refine(self.refine(input).await?),
            NodeType::Think => Outcome::Think(self.think(input).await?),
            NodeType::Judge => Outcome::Judge(self.judge(input, forced).await?),
        })
    }

    pub async fn search(&self, input: &NodeInput) -> Result<SearchOutcome, NodeError> {
        let prompt = self.node_prompt(&self.prompts.search_query, input, &[]);
        let raw = self.ask(Role::SearchQuery, prompt).await?;
        let query = first_line(&raw).unwrap_or_else(|| input.original.trim().to_string());
        let results = self.retriever.retrieve(&query, self.top_k).await?;
        let evidence = merge_evidence([&input.parent_evidence, &results]);
        let output = search_summary(&query, &results);
        Ok(SearchOutcome {
            query,
            results,
            evidence,
            output,
        })
    }

    pub async fn refine(&self, input: &NodeInput) -> Result<String, NodeError> {
        if !input.has_context() {
            return Err(NodeError::RefinePrecondition);
        }
        let prompt = self.node_prompt(&self.prompts.refine, input, &[]);
        let raw = self.ask(Role::Refine, prompt).await?;
        Ok(first_line(&raw).unwrap_or_else(|| input.original.clone()))
    }

    pub async fn think(&self, input: &NodeInput) -> Result<ThinkOutcome, NodeError> {
        let mode_note = match self.mode {
            Mode::Static => "State what the context establishes for the task.",
            Mode::Dynamic => "First decide whether the context is enough to complete the task; if not, say exactly what is missing.",
        };
        let prompt = self.node_prompt(&self.prompts.think, input, &[("mode_note", mode_note)]);
        if let Some(outcome) = parse_think(&self.ask(Role::Think, prompt.clone()).await?) {
            return Ok(outcome);
        }
        let retry = self.ask(Role::Think, format!("{prompt}{REASK}")).await?;
        Ok(
            parse_think(&retry)
                .unwrap_or_else(|| ThinkOutcome::insufficient(UNPARSEABLE_REASONING)),
        )
    }

    /// With `forced`, the answer is binary: one re-ask on UNCERTAIN or garbage,
    /// then REFUTES.
    pub async fn judge(&self, input: &NodeInput, forced: bool) -> Result<Verdict, NodeError> {
        let forced_note = if forced {
            "You must choose SUPPORTS or REFUTES; UNCERTAIN is not allowed. If the evidence does not establish the claim, answer REFUTES."
        } else {
            "Answer UNCERTAIN if the context is not enough to decide."
        };
        let prompt = self.node_prompt(&self.prompts.judge, input, &[("forced_note", forced_note)]);
        let first = parse_judge(&self.ask(Role::Judge, prompt.clone()).await?);
        let usable = |v: &Option<(Label, String)>| match v {
            Some((Label::Uncertain, _)) => !forced,
            Some(_) => true,
            None => false,
        };
        let answer = if usable(&first) {
            first
        } else {
            let suffix = if forced { REASK_BINARY } else { REASK };
            let second = parse_judge(&self.ask(Role::Judge, format!("{prompt}{suffix}")).await?);
            if usable(&second) {
                second
            } else {
                second.or(first)
            }
        };
        Ok(match answer {
            Some((label, explanation)) if label != Label::Uncertain || !forced => Verdict {
                label,
                explanation,
                forced,
            },
            other => Verdict {
                label: if forced {
                    Label::Refutes
                } else {
                    Label::Uncertain
                },
                explanation: match other {
                    Some((_, e)) if !e.is_empty() => {
                        format!("No binary verdict was given; defaulted. {e}")
                    }
                    Some(_) => "No binary verdict was given; defaulted.".to_string(),
                    None => "The verdict could not be parsed.".to_string(),
                },
                forced,
            },
        })
    }

    async fn ask(&self, role: Role, prompt: String) -> Result<String, GatewayError> {
        self.gateway
            .complete(&GatewayRequest::new(role, prompt))
            .await
    }

    fn node_prompt(&self, template: &str, input: &NodeInput, extra: &[(&str, &str)]) -> String {
        let context = format_context(input);
        let hint = if input.hint.trim().is_empty() {
            "(none)"
        } else {
            input.hint.as_str()
        };
        let mut vars: Vec<(&str, &str)> = vec![
            ("input", &input.original),
            ("hint", hint),
            ("context", &context),
        ];
        vars.extend_from_slice(extra);
        render(template, &vars)
    }
}

fn search_summary(query: &str, results: &EvidenceSet) -> String {
    let top: Vec<&str> = results.iter().take(3).map(|i| i.source.as_str()).collect();
    match results.len() {
        0 => format!("Query: {query}\nRetrieved 0 results."),
        n => format!(
            "Query: {query}\nRetrieved {n} results; top sources: {}.",
            top.join(", ")
        ),
    }
}

/// First non-empty line without surrounding quotes or a `Query:` label.
fn first_line(raw: &str) -> Option<String> {
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with("```"))?;
    let line = strip_label(line, "query:").unwrap_or(line);
    let line = line
        .trim()
        .trim_matches(|c| matches!(c, '"' | '\'' | '`'))
        .trim();
    (!line.is_empty()).then(|| line.to_string())
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    head.eq_ignore_ascii_case(label)
        .then(|| &line[label.len()..])
}

/// First `{...}` in `raw` that parses as a JSON object.
pub(crate) fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    raw.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(m))) => Some(m),
            _ => None,
        }
    })
}

fn text_field(obj: &Map<String, Value>, key: &str) -> Option<String> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
}

fn parse_think(raw: &str) -> Option<ThinkOutcome> {
    let obj = first_json_object(raw)?;
    let sufficient = match obj.get("sufficient")? {
        Value::Bool(b) => *b,
        Value::String(s) if s.eq_ignore_ascii_case("true") => true,
        Value::String(s) if s.eq_ignore_ascii_case("false") => false,
        _ => return None,
    };
    if sufficient {
        text_field(&obj, "conclusion").map(ThinkOutcome::sufficient)
    } else {
        let missing =
            text_field(&obj, "missing").unwrap_or_else(|| "unspecified information".to_string());
        Some(ThinkOutcome::insufficient(missing))
    }
}

fn parse_judge(raw: &str) -> Option<(Label, String)> {
    let obj = first_json_object(raw)?;
    let label = Label::parse(obj.get("label")?.as_str()?)?;
    Some((label, text_field(&obj, "explanation").unwrap_or_default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FnGateway, ScriptedGateway};
    use crate::retrieval::{CorpusIndex, EvidenceItem, WikiRetriever};

    const CORPUS: &str = r#"{"id":"Gregg_Rolie","title":"Gregg Rolie","text":"Gregg Rolie is an American keyboardist and singer."}
{"id":"Santana","title":"Santana","text":"Santana's first keyboardist was Gregg Rolie."}
{"id":"Journey","title":"Journey","text":"Journey was co-founded by keyboardist Gregg Rolie."}
{"id":"Bayou","title":"Bayou","text":"A bayou is a body of water."}
"#;

    fn ops(gw: impl Gateway + 'static) -> NodeOps {
        let index = Arc::new(CorpusIndex::from_jsonl(CORPUS).unwrap());
        NodeOps::new(
            Arc::new(gw),
            Arc::new(WikiRetriever::new(index)),
            Arc::new(Prompts::default()),
            Mode::Dynamic,
        )
    }

    fn input(original: &str) -> NodeInput {
        NodeInput {
            original: original.into(),
            parent_outputs: vec![],
            parent_evidence: EvidenceSet::new(),
            hint: String::new(),
        }
    }

    #[tokio::test]
    async fn search_ranks_matches() {
        let o =
            ops(ScriptedGateway::new().push(Role::SearchQuery, "\"Gregg Rolie keyboardist\"\n"));
        let out = o.search(&input("who")).await.unwrap();
        assert_eq!(out.query, "Gregg Rolie keyboardist");
        assert_eq!(out.results.len(), 3);
        let ranks: Vec<u32> = out.results.iter().map(|i| i.rank).collect();
        assert_eq!(ranks, vec![1, 2, 3]);
        assert!(out
            .output
            .starts_with("Query: Gregg Rolie keyboardist\nRetrieved 3 results"));
    }

    #[tokio::test]
    async fn search_without_matches_is_empty() {
        let o = ops(ScriptedGateway::new().push(Role::SearchQuery, "zeppelin"));
        let out = o.search(&input("x")).await.unwrap();
        assert!(out.results.is_empty());
        assert_eq!(out.output, "Query: zeppelin\nRetrieved 0 results.");
    }

    #[tokio::test]
    async fn k_beyond_corpus() {
        let mut o =
            ops(ScriptedGateway::new()
                .push(Role::SearchQuery, "Gregg Rolie bayou water keyboardist"));
        o.top_k = 10;
        assert_eq!(o.search(&input("x")).await.unwrap().results.len(), 4);
    }

    #[tokio::test]
    async fn search_accumulates_parent_evidence() {
        let o = ops(ScriptedGateway::new().push(Role::SearchQuery, "bayou"));
        let mut inp = input("x");
        inp.parent_evidence = EvidenceSet::from_items([
            EvidenceItem::new("Bayou", "A bayou is a body of water.", 9.0),
            EvidenceItem::new("other", "earlier", 1.0),
        ]);
        let out = o.search(&inp).await.unwrap();
        assert_eq!(out.results.len(), 1);
        assert_eq!(out.evidence.len(), 2);
        assert!(!out.evidence.has_duplicates());
    }

    #[tokio::test]
    async fn empty_query_falls_back_to_input() {
        let o = ops(ScriptedGateway::new().push(Role::SearchQuery, "  \n"));
        assert_eq!(o.search(&input("bayou")).await.unwrap().query, "bayou");
    }

    #[tokio::test]
    async fn refine_substitutes_from_evidence() {
        let rewritten = "The civil fraud case and the defamation case led to Trump being fined over $500 million";
        let o = ops(ScriptedGateway::new().push(Role::Refine, rewritten));
        let mut inp = input("These actions led to Trump being fined over $500 million");
        inp.parent_evidence = EvidenceSet::from_items([EvidenceItem::new(
            "news",
            "Trump was fined in the civil fraud case and the defamation case.",
            1.0,
        )]);
        assert_eq!(o.refine(&inp).await.unwrap(), rewritten);
    }

    #[tokio::test]
    async fn refine_echo_keeps_input() {
        let o = ops(FnGateway::new(|req| {
            let line = req
                .prompt
                .lines()
                .find(|l| l.starts_with("Text: "))
                .unwrap();
            Ok(line.trim_start_matches("Text: ").to_string())
        }));
        let mut inp = input("Gregg Rolie co-founded Journey.");
        inp.parent_outputs = vec![("s1".into(), "context".into())];
        assert_eq!(
            o.refine(&inp).await.unwrap(),
            "Gregg Rolie co-founded Journey."
        );
    }

    #[tokio::test]
    async fn refine_without_context() {
        let o = ops(ScriptedGateway::new());
        assert_eq!(
            o.refine(&input("it")).await,
            Err(NodeError::RefinePrecondition)
        );
    }

    #[tokio::test]
    async fn think_outcomes() {
        let o = ops(ScriptedGateway::new()
            .push(
                Role::Think,
                r#"{"sufficient": true, "conclusion": "Both battles confirmed"}"#,
            )
            .push(
                Role::Think,
                r#"{"sufficient": false, "missing": "fine amount unknown"}"#,
            ));
        assert_eq!(
            o.think(&input("t")).await.unwrap(),
            ThinkOutcome::sufficient("Both battles confirmed")
        );
        assert_eq!(
            o.think(&input("t")).await.unwrap(),
            ThinkOutcome::insufficient("fine amount unknown")
        );
    }

    #[tokio::test]
    async fn think_reasks_once_then_fails_safe() {
        let gw = Arc::new(
            ScriptedGateway::new()
                .push(Role::Think, "hmm")
                .push(Role::Think, r#"{"sufficient": true}"#),
        );
        let mut o = ops(ScriptedGateway::new());
        o.gateway = gw.clone();
        assert_eq!(
            o.think(&input("t")).await.unwrap(),
            ThinkOutcome::insufficient(UNPARSEABLE_REASONING)
        );
        assert_eq!(gw.calls(), 2);
    }

    #[tokio::test]
    async fn think_recovers_on_reask() {
        let o = ops(ScriptedGateway::new().push(Role::Think, "not json").push(
            Role::Think,
            "```json\n{\"sufficient\": true, \"conclusion\": \"ok\"}\n```",
        ));
        assert_eq!(
            o.think(&input("t")).await.unwrap(),
            ThinkOutcome::sufficient("ok")
        );
    }

    #[tokio::test]
    async fn judge_plain() {
        let o = ops(ScriptedGateway::new().push(
            Role::Judge,
            r#"{"label":"SUPPORTS","explanation":"matches"}"#,
        ));
        let v = o.judge(&input("c"), false).await.unwrap();
        assert_eq!(
            v,
            Verdict {
                label: Label::Supports,
                explanation: "matches".into(),
                forced: false
            }
        );
    }

    #[tokio::test]
    async fn judge_uncertain_unforced_is_returned() {
        let o =
            ops(ScriptedGateway::new()
                .push(Role::Judge, r#"{"label":"UNCERTAIN","explanation":"?"}"#));
        assert_eq!(
            o.judge(&input("c"), false).await.unwrap().label,
            Label::Uncertain
        );
    }

    #[tokio::test]
    async fn judge_forced_uncertain_twice_is_refutes() {
        let gw = Arc::new(
            ScriptedGateway::new()
                .push(Role::Judge, r#"{"label":"UNCERTAIN","explanation":"?"}"#)
                .push(Role::Judge, r#"{"label":"UNCERTAIN","explanation":"?"}"#),
        );
        let mut o = ops(ScriptedGateway::new());
        o.gateway = gw.clone();
        let v = o.judge(&input("c"), true).await.unwrap();
        assert_eq!(v.label, Label::Refutes);
        assert!(v.forced);
        assert_eq!(gw.calls(), 2);
    }

    #[tokio::test]
    async fn judge_forced_second_answer_counts() {
        let o = ops(ScriptedGateway::new()
            .push(Role::Judge, r#"{"label":"UNCERTAIN"}"#)
            .push(Role::Judge, r#"{"label":"supported","explanation":"yes"}"#));
        let v = o.judge(&input("c"), true).await.unwrap();
        assert_eq!((v.label, v.forced), (Label::Supports, true));
    }

    #[tokio::test]
    async fn judge_unparseable() {
        let o = ops(ScriptedGateway::new()
            .push(Role::Judge, "x")
            .push(Role::Judge, "y"));
        assert_eq!(
            o.judge(&input("c"), false).await.unwrap().label,
            Label::Uncertain
        );
        let o = ops(ScriptedGateway::new()
            .push(Role::Judge, "x")
            .push(Role::Judge, "y"));
        assert_eq!(
            o.judge(&input("c"), true).await.unwrap().label,
            Label::Refutes
        );
    }

    #[test]
    fn label_spellings() {
        assert_eq!(Label::parse("Supported"), Some(Label::Supports));
        assert_eq!(Label::parse("NOT SUPPORTED"), Some(Label::Refutes));
        assert_eq!(Label::parse("not-enough-info"), Some(Label::Uncertain));
        assert_eq!(Label::parse("maybe"), None);
    }

    #[test]
    fn fatal_errors() {
        assert!(NodeError::SearchFailed(SearchError::ReplayMiss { query: "q".into() }).is_fatal());
        assert!(!NodeError::RefinePrecondition.is_fatal());
        assert!(!NodeError::Gateway(GatewayError::Transport {
            attempts: 3,
            message: "x".into()
        })
        .is_fatal());
    }
}
