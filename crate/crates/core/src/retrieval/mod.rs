//! Evidence retrieval: BM25 over a local corpus and web snippet search behind a
//! single [`Retriever`] interface, plus recording/replay of retrieval calls.

mod bm25;
mod evidence;
mod web;

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{tokenize, Bm25Params, CorpusError, CorpusIndex, Document};
pub use evidence::{merge_evidence, EvidenceItem, EvidenceSet};
pub use web::{
    query_digest, FixtureProvider, HttpProvider, HttpProviderConfig, RetryPolicy, SearchProvider,
    WebResult, WebSearchClient, ENV_SEARCH_API_KEY, ENV_SEARCH_ENDPOINT, ENV_SEARCH_PROXY,
};

/// Number of paragraphs or snippets fetched per query.
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Strategy {
    Wiki,
    Web,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Wiki => "WIKI",
            Strategy::Web => "WEB",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SearchError {
    #[error("search for {query:?} failed after {attempts} attempt(s): {message}")]
    Failed {
        query: String,
        attempts: u32,
        message: String,
    },
    #[error("no recorded retrieval for query {query:?}")]
    ReplayMiss { query: String },
}

#[async_trait]
pub trait Retriever: Send + Sync {
    fn strategy(&self) -> Strategy;

    /// At most `k` items, duplicate-free, best first.
    async fn retrieve(&self, query: &str, k: usize) -> Result<EvidenceSet, SearchError>;
}

pub struct WikiRetriever {
    index: Arc<CorpusIndex>,
}

impl WikiRetriever {
    pub fn new(index: Arc<CorpusIndex>) -> Self {
        Self { index }
    }
}

#[async_trait]
impl Retriever for WikiRetriever {
    fn strategy(&self) -> Strategy {
        Strategy::Wiki
    }

    async fn retrieve(&self, query: &str, k: usize) -> Result<EvidenceSet, SearchError> {
        Ok(self.index.search(query, k))
    }
}

pub struct WebRetriever {
    client: WebSearchClient,
}

impl WebRetriever {
    pub fn new(client: WebSearchClient) -> Self {
        Self { client }
    }
}

#[async_trait]
impl Retriever for WebRetriever {
    fn strategy(&self) -> Strategy {
        Strategy::Web
    }

    async fn retrieve(&self, query: &str, k: usize) -> Result<EvidenceSet, SearchError> {
        self.client.search(query, k).await
    }
}

/// One line of a retrieval log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub query: String,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<EvidenceSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Delegates to another retriever and keeps every call so a run can be replayed
/// without the corpus or the network.
pub struct RecordingRetriever {
    inner: Arc<dyn Retriever>,
    log: Mutex<Vec<RetrievalRecord>>,
}

impl RecordingRetriever {
    pub fn new(inner: Arc<dyn Retriever>) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<RetrievalRecord> {
        self.log.lock().unwrap().clone()
    }

    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

#[async_trait]
impl Retriever for RecordingRetriever {
    fn strategy(&self) -> Strategy {
        self.inner.strategy()
    }

    async fn retrieve(&self, query: &str, k: usize) -> Result<EvidenceSet, SearchError> {
        let result = self.inner.retrieve(query, k).await;
        let (evidence, error) = match &result {
            Ok(set) => (Some(set.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.log.lock().unwrap().push(RetrievalRecord {
            query: query.to_string(),
            k,
            evidence,
            error,
        });
        result
    }
}

/// Answers from a retrieval log; identical queries are served in log order.
pub struct ReplayRetriever {
    strategy: Strategy,
    table: Mutex<HashMap<(String, usize), VecDeque<RetrievalRecord>>>,
}

impl ReplayRetriever {
    pub fn new(strategy: Strategy, records: Vec<RetrievalRecord>) -> Self {
        let mut table: HashMap<(String, usize), VecDeque<RetrievalRecord>> = HashMap::new();
        for r in records {
            table
                .entry((r.query.clone(), r.k))
                .or_default()
                .push_back(r);
        }
        Self {
            strategy,
            table: Mutex::new(table),
        }
    }

    pub fn from_jsonl(strategy: Strategy, raw: &str) -> Result<Self, String> {
        let mut records = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(line)
                    .map_err(|e| format!("retrieval log line {}: {e}", i + 1))?,
            );
        }
        Ok(Self::new(strategy, records))
    }

    pub fn load(strategy: Strategy, path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_jsonl(strategy, &raw)
    }
}

#[async_trait]
impl Retriever for ReplayRetriever {
    fn strategy(&self) -> Strategy {
        self.strategy
    }

    async fn retrieve(&self, query: &str, k: usize) -> Result<EvidenceSet, SearchError> {
        let record = self
            .table
            .lock()
            .unwrap()
            .get_mut(&(query.to_string(), k))
            .and_then(VecDeque::pop_front);
        match record {
            Some(RetrievalRecord {
                evidence: Some(set),
                ..
            }) => Ok(set),
            Some(RetrievalRecord { error, .. }) => Err(SearchError::Failed {
                query: query.to_string(),
                attempts: 1,
                message: error.unwrap_or_else(|| "recorded failure".into()),
            }),
            None => Err(SearchError::ReplayMiss {
                query: query.to_string(),
            }),
        }
    }
}
