//! Run directories: everything needed to inspect or replay one claim.
//!
//! ```text
//! config.json      claim and resolved settings
//! transcript.jsonl every gateway exchange
//! retrieval.jsonl  every search with its evidence
//! events.jsonl     timestamped execution events
//! graph.json       final graph
//! result.json      canonical run result
//! replayed.json    replay output, only after a divergence
//! ```

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use factgraph_core::executor::{EventLog, RunResult};
use factgraph_core::gateway::{Gateway, RecordingGateway, Transcript};
use factgraph_core::prompts::Prompts;
use factgraph_core::retrieval::{RecordingRetriever, Retriever};

use crate::backend;
use crate::config::Settings;

pub const CONFIG_FILE: &str = "config.json";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const RETRIEVAL_FILE: &str = "retrieval.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const GRAPH_FILE: &str = "graph.json";
pub const RESULT_FILE: &str = "result.json";
/// Written by a diverging replay, next to the stored result.
pub const REPLAYED_FILE: &str = "replayed.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub claim: String,
    #[serde(flatten)]
    pub settings: Settings,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let raw = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&raw).with_context(|| format!("invalid {}", path.display()))
    }
}

/// Runs one claim with recording wrappers around both backends. With `dir`,
/// writes the full artifact set; the transcript and retrieval log are written
/// even when the run fails.
pub async fn recorded_run(
    claim: &str,
    settings: &Settings,
    gateway: Arc<dyn Gateway>,
    retriever: Arc<dyn Retriever>,
    prompts: Arc<Prompts>,
    dir: Option<&Path>,
) -> Result<RunResult> {
    let transcript = Arc::new(Transcript::new());
    let gateway = Arc::new(RecordingGateway::new(gateway, transcript.clone()));
    let retriever = Arc::new(RecordingRetriever::new(retriever));
    let engine = backend::engine(settings, gateway, retriever.clone(), prompts)?;
    let log = match dir {
        Some(d) => {
            std::fs::create_dir_all(d).with_context(|| format!("cannot create {}", d.display()))?;
            let manifest = RunManifest {
                claim: claim.to_string(),
                settings: settings.clone(),
            };
            write(
                d,
                CONFIG_FILE,
                &(serde_json::to_string_pretty(&manifest)? + "\n"),
            )?;
            EventLog::with_file(&d.join(EVENTS_FILE)).context("cannot open event log")?
        }
        None => EventLog::new(),
    };
    let outcome = engine.run_claim_logged(claim, Arc::new(log)).await;
    if let Some(d) = dir {
        write(d, TRANSCRIPT_FILE, &transcript.to_jsonl())?;
        write(d, RETRIEVAL_FILE, &retriever.to_jsonl())?;
        if let Ok(result) = &outcome {
            write(
                d,
                GRAPH_FILE,
                &(result.final_graph.to_canonical_json() + "\n"),
            )?;
            write(d, RESULT_FILE, &result.to_canonical_json())?;
        }
    }
    Ok(outcome?)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// JSON path of the first difference between two documents, `$` for the root.
pub fn first_difference(a: &Value, b: &Value) -> Option<String> {
    diff_at(a, b, "$".to_string())
}

fn diff_at(a: &Value, b: &Value, path: String) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, va) in x {
                match y.get(k) {
                    Some(vb) => {
                        if let Some(p) = diff_at(va, vb, format!("{path}.{k}")) {
                            return Some(p);
                        }
                    }
                    None => return Some(format!("{path}.{k}")),
                }
            }
            y.keys()
                .find(|k| !x.contains_key(*k))
                .map(|k| format!("{path}.{k}"))
        }
        (Value::Array(x), Value::Array(y)) => {
            for (i, (va, vb)) in x.iter().zip(y).enumerate() {
                if let Some(p) = diff_at(va, vb, format!("{path}[{i}]")) {
                    return Some(p);
                }
            }
            (x.len() != y.len()).then(|| format!("{path}[{}]", x.len().min(y.len())))
        }
        _ => (a != b).then_some(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn diff_paths() {
        let a = json!({"verdict": {"label": "SUPPORTS"}, "n": [1, 2]});
        assert_eq!(first_difference(&a, &a), None);
        let b = json!({"verdict": {"label": "REFUTES"}, "n": [1, 2]});
        assert_eq!(first_difference(&a, &b).as_deref(), Some("$.verdict.label"));
        let c = json!({"verdict": {"label": "SUPPORTS"}, "n": [1]});
        assert_eq!(first_difference(&a, &c).as_deref(), Some("$.n[1]"));
        assert_eq!(
            first_difference(&json!(1), &json!("1")).as_deref(),
            Some("$")
        );
    }
}
