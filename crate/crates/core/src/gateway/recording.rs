use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Gateway, GatewayError, GatewayRequest, Role};

/// One model call. Recorded entries carry `digest` and `prompt`; hand-written
/// script entries may omit both and are then served per role in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default)]
    pub response: String,
    /// Set when the call failed; replaying the entry reproduces the failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub latency_ms: u64,
    /// Scripted backends sleep this long before answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

impl TranscriptEntry {
    pub fn scripted(role: Role, response: impl Into<String>) -> Self {
        Self {
            role,
            digest: None,
            prompt: None,
            response: response.into(),
            error: None,
            latency_ms: 0,
            delay_ms: None,
        }
    }
}

/// Append-only call log; JSON-lines on disk, one call per line.
#[derive(Debug, Default)]
pub struct Transcript {
    inner: Mutex<TranscriptInner>,
}

#[derive(Debug, Default)]
struct TranscriptInner {
    entries: Vec<TranscriptEntry>,
    prompts: HashMap<String, String>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, entry: TranscriptEntry) -> Result<(), GatewayError> {
        let mut inner = self.inner.lock().unwrap();
        if let (Some(digest), Some(prompt)) = (&entry.digest, &entry.prompt) {
            match inner.prompts.get(digest) {
                Some(seen) if seen != prompt => {
                    return Err(GatewayError::DigestCollision {
                        digest: digest.clone(),
                    });
                }
                Some(_) => {}
                None => {
                    inner.prompts.insert(digest.clone(), prompt.clone());
                }
            }
        }
        inner.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.inner.lock().unwrap().entries.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_jsonl(&self) -> String {
        self.entries()
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn parse_jsonl(raw: &str) -> Result<Vec<TranscriptEntry>, String> {
        raw.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| format!("transcript line {}: {e}", i + 1))
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Vec<TranscriptEntry>, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse_jsonl(&raw)
    }
}

/// Forwards to another gateway and appends every call, including failed ones,
/// to a transcript.
pub struct RecordingGateway {
    inner: Arc<dyn Gateway>,
    transcript: Arc<Transcript>,
}

impl RecordingGateway {
    pub fn new(inner: Arc<dyn Gateway>, transcript: Arc<Transcript>) -> Self {
        Self { inner, transcript }
    }

    pub fn transcript(&self) -> &Arc<Transcript> {
        &self.transcript
    }
}

#[async_trait]
impl Gateway for RecordingGateway {
    async fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        let started = Instant::now();
        let result = self.inner.complete(request).await;
        if matches!(&result, Err(e) if e.is_fatal()) {
            return result;
        }
        let (response, error) = match &result {
            Ok(text) => (text.clone(), None),
            Err(e) => (String::new(), Some(e.to_string())),
        };
        self.transcript.append(TranscriptEntry {
            role: request.role,
            digest: Some(request.digest()),
            prompt: Some(request.prompt.clone()),
            response,
            error,
            latency_ms: started.elapsed().as_millis() as u64,
            delay_ms: None,
        })?;
        result
    }
}
