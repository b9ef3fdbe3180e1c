//! Web snippet search: a live HTTP provider or an offline fixture directory,
//! wrapped in a client that retries, caps concurrency and maps snippets to
//! evidence.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use super::evidence::{EvidenceItem, EvidenceSet};
use super::SearchError;

pub const ENV_SEARCH_ENDPOINT: &str = "FACTGRAPH_SEARCH_ENDPOINT";
pub const ENV_SEARCH_API_KEY: &str = "FACTGRAPH_SEARCH_API_KEY";
pub const ENV_SEARCH_PROXY: &str = "FACTGRAPH_SEARCH_PROXY";

/// Provider-agnostic search hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebResult {
    #[serde(alias = "link", alias = "href")]
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(alias = "body")]
    pub snippet: String,
}

#[async_trait]
pub trait SearchProvider: Send + Sync {
    async fn fetch(&self, query: &str, k: usize) -> Result<Vec<WebResult>, String>;
}

/// `<dir>/<sha256(query)>.json` holds either a JSON array of results or
/// `{"query": ..., "results": [...]}`. A missing file means no hits.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureFile {
    Bare(Vec<WebResult>),
    Wrapped { results: Vec<WebResult> },
}

impl FixtureProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(dir: &Path, query: &str) -> PathBuf {
        dir.join(format!("{}.json", query_digest(query)))
    }

    /// Writes a fixture file for `query`; used by tests and fixture tooling.
    pub fn write(dir: &Path, query: &str, results: &[WebResult]) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = Self::path_for(dir, query);
        let body = serde_json::json!({ "query": query, "results": results });
        std::fs::write(&path, serde_json::to_vec_pretty(&body)?)?;
        Ok(path)
    }
}

pub fn query_digest(query: &str) -> String {
    hex::encode(Sha256::digest(query.as_bytes()))
}

#[async_trait]
impl SearchProvider for FixtureProvider {
    async fn fetch(&self, query: &str, _k: usize) -> Result<Vec<WebResult>, String> {
        let path = Self::path_for(&self.dir, query);
        let raw = match tokio::fs::read(&path).await {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                tracing::debug!(query, path = %path.display(), "no search fixture");
                return Ok(Vec::new());
            }
            Err(e) => return Err(format!("{}: {e}", path.display())),
        };
        match serde_json::from_slice::<FixtureFile>(&raw) {
            Ok(FixtureFile::Bare(r)) | Ok(FixtureFile::Wrapped { results: r }) => Ok(r),
            Err(e) => Err(format!("{}: {e}", path.display())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub proxy: Option<String>,
    pub timeout: Duration,
}

impl HttpProviderConfig {
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_SEARCH_ENDPOINT).ok()?;
        Some(Self {
            endpoint,
            api_key: std::env::var(ENV_SEARCH_API_KEY).ok(),
            proxy: std::env::var(ENV_SEARCH_PROXY).ok(),
            timeout: Duration::from_secs(15),
        })
    }
}

/// POSTs `{"q": query, "num": k}` and reads hits from `results`, `organic` or
/// `items` (or a bare array), accepting the usual field spellings.
pub struct HttpProvider {
    http: reqwest::Client,
    config: HttpProviderConfig,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, String> {
        let mut builder = reqwest::Client::builder().timeout(config.timeout);
        if let Some(proxy) = &config.proxy {
            builder = builder.proxy(reqwest::Proxy::all(proxy).map_err(|e| e.to_string())?);
        }
        let http = builder.build().map_err(|e| e.to_string())?;
        Ok(Self { http, config })
    }
}

fn hits_from_value(body: &Value) -> Vec<WebResult> {
    let list = match body {
        Value::Array(items) => items.as_slice(),
        Value::Object(map) => ["results", "organic", "items"]
            .iter()
            .find_map(|key| map.get(*key).and_then(Value::as_array))
            .map(Vec::as_slice)
            .unwrap_or(&[]),
        _ => &[],
    };
    let field = |item: &Value, keys: &[&str]| {
        keys.iter()
            .find_map(|k| item.get(*k).and_then(Value::as_str))
            .unwrap_or_default()
            .to_string()
    };
    list.iter()
        .map(|item| WebResult {
            url: field(item, &["url", "link", "href"]),
            title: field(item, &["title"]),
            snippet: field(item, &["snippet", "body", "content", "description"]),
        })
        .collect()
}

#[async_trait]
impl SearchProvider for HttpProvider {
    async fn fetch(&self, query: &str, k: usize) -> Result<Vec<WebResult>, String> {
        let mut req = self
            .http
            .post(&self.config.endpoint)
            .json(&serde_json::json!({ "q": query, "num": k }));
        if let Some(key) = &self.config.api_key {
            req = req.header("X-API-KEY", key);
        }
        let resp = req.send().await.map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("search provider returned {status}"));
        }
        let body: Value = resp.json().await.map_err(|e| e.to_string())?;
        Ok(hits_from_value(&body))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 2,
            base_backoff: Duration::from_millis(250),
        }
    }
}

pub struct WebSearchClient {
    provider: Arc<dyn SearchProvider>,
    retry: RetryPolicy,
    permits: Semaphore,
}

impl WebSearchClient {
    pub fn new(provider: Arc<dyn SearchProvider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            permits: Semaphore::new(4),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_concurrent(mut self, n: usize) -> Self {
        self.permits = Semaphore::new(n.max(1));
        self
    }

    /// Top-`k` snippets with score `1/rank`, duplicates removed.
    pub async fn search(&self, query: &str, k: usize) -> Result<EvidenceSet, SearchError> {
        let _permit = self
            .permits
            .acquire()
            .await
            .expect("semaphore never closed");
        let mut attempt = 0;
        let hits = loop {
            match self.provider.fetch(query, k).await {
                Ok(hits) => break hits,
                Err(message) if attempt >= self.retry.retries => {
                    return Err(SearchError::Failed {
                        query: query.to_string(),
                        attempts: attempt + 1,
                        message,
                    });
                }
                Err(message) => {
                    let delay = self.retry.base_backoff * 2u32.pow(attempt);
                    tracing::warn!(query, attempt, %message, "search failed; retrying");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        };
        Ok(snippets_to_evidence(hits, k))
    }
}

fn snippets_to_evidence(hits: Vec<WebResult>, k: usize) -> EvidenceSet {
    let mut set = EvidenceSet::from_items(
        hits.into_iter()
            .map(|h| EvidenceItem::new(h.url, h.snippet, 0.0)),
    );
    set.truncate(k);
    EvidenceSet::from_items(set.iter().map(|item| {
        EvidenceItem::new(
            item.source.clone(),
            item.content.clone(),
            1.0 / item.rank as f64,
        )
    }))
}
