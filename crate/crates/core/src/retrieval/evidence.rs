use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// One retrieved paragraph or snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    /// Document id for corpus hits, URL for web hits.
    pub source: String,
    pub content: String,
    pub score: f64,
    /// 1-based position within the owning set.
    pub rank: u32,
}

impl EvidenceItem {
    pub fn new(source: impl Into<String>, content: impl Into<String>, score: f64) -> Self {
        Self {
            source: source.into(),
            content: content.into(),
            score,
            rank: 0,
        }
    }

    /// Dedupe key: the source plus the content with case and whitespace runs folded.
    pub fn dedupe_key(&self) -> (String, String) {
        (self.source.clone(), normalize_content(&self.content))
    }
}

fn normalize_content(content: &str) -> String {
    content
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Ordered, duplicate-free list of evidence items.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvidenceSet(Vec<EvidenceItem>);

impl EvidenceSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from raw items: drops empty content and duplicates (first wins)
    /// and assigns ranks 1..n in the given order.
    pub fn from_items(items: impl IntoIterator<Item = EvidenceItem>) -> Self {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for item in items {
            if item.content.trim().is_empty() {
                continue;
            }
            if seen.insert(item.dedupe_key()) {
                out.push(item);
            }
        }
        let mut set = Self(out);
        set.rerank();
        set
    }

    fn rerank(&mut self) {
        for (i, item) in self.0.iter_mut().enumerate() {
            item.rank = i as u32 + 1;
        }
    }

    pub fn items(&self) -> &[EvidenceItem] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EvidenceItem> {
        self.0.iter()
    }

    /// Keeps the first `k` items.
    pub fn truncate(&mut self, k: usize) {
        self.0.truncate(k);
    }

    pub fn has_duplicates(&self) -> bool {
        let mut seen = HashSet::new();
        self.0.iter().any(|item| !seen.insert(item.dedupe_key()))
    }
}

impl<'a> IntoIterator for &'a EvidenceSet {
    type Item = &'a EvidenceItem;
    type IntoIter = std::slice::Iter<'a, EvidenceItem>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Concatenates sets in argument order, keeping the first occurrence of every
/// dedupe key, and reassigns ranks 1..n.
pub fn merge_evidence<'a>(sets: impl IntoIterator<Item = &'a EvidenceSet>) -> EvidenceSet {
    EvidenceSet::from_items(sets.into_iter().flat_map(|s| s.0.iter().cloned()))
}
