//! Okapi BM25 over a paragraph corpus held in memory.
//!
//! Corpus files are JSONL, one `{"id", "title", "text"}` object per line and one
//! paragraph per document. Title and text are indexed together; evidence content
//! is the paragraph text.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::evidence::{EvidenceItem, EvidenceSet};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("corpus line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Lowercases, splits on anything that is not alphanumeric, drops empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Immutable inverted index; safe to share across threads once built.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    docs: Vec<Document>,
    doc_len: Vec<u32>,
    postings: HashMap<String, Vec<Posting>>,
    avg_doc_len: f64,
    params: Bm25Params,
}

impl CorpusIndex {
    pub fn build(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_jsonl(&raw)
    }

    pub fn from_jsonl(raw: &str) -> Result<Self, CorpusError> {
        #[derive(Deserialize)]
        struct Line {
            id: String,
            #[serde(default)]
            title: String,
            text: String,
        }

        let mut docs = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in raw.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            if parsed.id.is_empty() {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: "empty document id".into(),
                });
            }
            if parsed.text.trim().is_empty() {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: format!("document {:?} has empty text", parsed.id),
                });
            }
            if !seen.insert(parsed.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    line: line_no,
                    id: parsed.id,
                });
            }
            docs.push(Document {
                id: parsed.id,
                title: parsed.title,
                text: parsed.text,
            });
        }
        Ok(Self::from_documents(docs, Bm25Params::default()))
    }

    /// Callers must guarantee unique ids; `from_jsonl` checks this.
    pub fn from_documents(docs: Vec<Document>, params: Bm25Params) -> Self {
        let mut doc_len = Vec::with_capacity(docs.len());
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        for (doc_idx, doc) in docs.iter().enumerate() {
            let tokens = tokenize(&indexed_text(doc));
            doc_len.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for tok in tokens {
                *tf.entry(tok).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: doc_idx as u32,
                    tf: count,
                });
            }
        }
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avg_doc_len = if docs.is_empty() {
            0.0
        } else {
            total as f64 / docs.len() as f64
        };
        Self {
            docs,
            doc_len,
            postings,
            avg_doc_len,
            params,
        }
    }

    pub fn with_params(mut self, params: Bm25Params) -> Self {
        self.params = params;
        self
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.id == id)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    /// Scores every document sharing at least one term with the query and returns
    /// the best `k`, ties broken by ascending document id.
    pub fn search(&self, query: &str, k: usize) -> EvidenceSet {
        let terms = tokenize(query);
        if terms.is_empty() || k == 0 || self.docs.is_empty() {
            return EvidenceSet::new();
        }
        let n = self.docs.len() as f64;
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        // Repeated query terms contribute once per occurrence.
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let df = list.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for p in list {
                let tf = p.tf as f64;
                let dl = self.doc_len[p.doc as usize] as f64;
                let norm = k1 * (1.0 - b + b * dl / self.avg_doc_len);
                *scores.entry(p.doc).or_default() += idf * tf / (tf + norm);
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.docs[a.0 as usize].id.cmp(&self.docs[b.0 as usize].id))
        });
        ranked.truncate(k);
        EvidenceSet::from_items(ranked.into_iter().map(|(idx, score)| {
            let doc = &self.docs[idx as usize];
            EvidenceItem::new(doc.id.clone(), doc.text.clone(), score)
        }))
    }
}

fn indexed_text(doc: &Document) -> String {
    if doc.title.is_empty() {
        doc.text.clone()
    } else {
        format!("{} {}", doc.title, doc.text)
    }
}
