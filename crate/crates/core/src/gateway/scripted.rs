use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;

use super::{
    prompt_digest, Gateway, GatewayError, GatewayRequest, Role, Transcript, TranscriptEntry,
};

/// Deterministic backend. Lookup is by (role, prompt digest) first, then the
/// next unkeyed entry queued for the role.
#[derive(Default)]
pub struct ScriptedGateway {
    state: Mutex<ScriptState>,
    calls: AtomicUsize,
}

#[derive(Default)]
struct ScriptState {
    pinned: HashMap<(Role, String), VecDeque<TranscriptEntry>>,
    queued: HashMap<Role, VecDeque<TranscriptEntry>>,
}

impl ScriptedGateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let gw = Self::new();
        {
            let mut state = gw.state.lock().unwrap();
            for entry in entries {
                match &entry.digest {
                    Some(d) => state
                        .pinned
                        .entry((entry.role, d.clone()))
                        .or_default()
                        .push_back(entry),
                    None => state.queued.entry(entry.role).or_default().push_back(entry),
                }
            }
        }
        gw
    }

    pub fn from_jsonl(raw: &str) -> Result<Self, String> {
        Ok(Self::from_entries(Transcript::parse_jsonl(raw)?))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        Ok(Self::from_entries(Transcript::load(path)?))
    }

    /// Queues an unkeyed response for `role`.
    pub fn push(self, role: Role, response: impl Into<String>) -> Self {
        self.push_entry(TranscriptEntry::scripted(role, response))
    }

    pub fn push_delayed(self, role: Role, response: impl Into<String>, delay: Duration) -> Self {
        let mut e = TranscriptEntry::scripted(role, response);
        e.delay_ms = Some(delay.as_millis() as u64);
        self.push_entry(e)
    }

    /// Pins a response to one exact prompt.
    pub fn pin(self, role: Role, prompt: &str, response: impl Into<String>) -> Self {
        let mut e = TranscriptEntry::scripted(role, response);
        e.digest = Some(prompt_digest(prompt));
        e.prompt = Some(prompt.to_string());
        self.push_entry(e)
    }

    fn push_entry(self, entry: TranscriptEntry) -> Self {
        {
            let mut state = self.state.lock().unwrap();
            match &entry.digest {
                Some(d) => state
                    .pinned
                    .entry((entry.role, d.clone()))
                    .or_default()
                    .push_back(entry),
                None => state.queued.entry(entry.role).or_default().push_back(entry),
            }
        }
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Entries not yet consumed.
    pub fn remaining(&self) -> usize {
        let state = self.state.lock().unwrap();
        state.pinned.values().map(VecDeque::len).sum::<usize>()
            + state.queued.values().map(VecDeque::len).sum::<usize>()
    }
}

#[async_trait]
impl Gateway for ScriptedGateway {
    async fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let digest = request.digest();
        let entry = {
            let mut state = self.state.lock().unwrap();
            let pinned = state
                .pinned
                .get_mut(&(request.role, digest.clone()))
                .and_then(VecDeque::pop_front);
            pinned.or_else(|| {
                state
                    .queued
                    .get_mut(&request.role)
                    .and_then(VecDeque::pop_front)
            })
        };
        let Some(entry) = entry else {
            return Err(GatewayError::ScriptMiss {
                role: request.role,
                digest,
            });
        };
        if let Some(ms) = entry.delay_ms {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
        match entry.error {
            Some(message) => Err(GatewayError::Transport {
                attempts: 1,
                message,
            }),
            None => Ok(entry.response),
        }
    }
}

type Responder = dyn Fn(&GatewayRequest) -> Result<String, GatewayError> + Send + Sync;

/// Backend computed from the request; handy for adversarial and rule-based tests.
pub struct FnGateway {
    f: Box<Responder>,
    calls: AtomicUsize,
}

impl FnGateway {
    pub fn new(
        f: impl Fn(&GatewayRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Gateway for FnGateway {
    async fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn digest_lookup() {
        let gw = ScriptedGateway::new().pin(Role::Think, "exact prompt", "R");
        let req = GatewayRequest::new(Role::Think, "exact prompt");
        assert_eq!(gw.complete(&req).await.unwrap(), "R");
    }

    #[tokio::test]
    async fn queue_order() {
        let gw = ScriptedGateway::new()
            .push(Role::Judge, "A")
            .push(Role::Judge, "B");
        let req = GatewayRequest::new(Role::Judge, "same");
        assert_eq!(gw.complete(&req).await.unwrap(), "A");
        assert_eq!(gw.complete(&req).await.unwrap(), "B");
        assert_eq!(gw.calls(), 2);
    }

    #[tokio::test]
    async fn miss_names_role_and_digest() {
        let gw = ScriptedGateway::new().push(Role::Judge, "A");
        let req = GatewayRequest::new(Role::Refine, "anything");
        assert_eq!(
            gw.complete(&req).await,
            Err(GatewayError::ScriptMiss {
                role: Role::Refine,
                digest: prompt_digest("anything")
            })
        );
    }

    #[tokio::test]
    async fn pinned_wins_over_queue() {
        let gw = ScriptedGateway::new()
            .push(Role::Think, "queued")
            .pin(Role::Think, "p", "pinned");
        assert_eq!(
            gw.complete(&GatewayRequest::new(Role::Think, "p"))
                .await
                .unwrap(),
            "pinned"
        );
        assert_eq!(
            gw.complete(&GatewayRequest::new(Role::Think, "p"))
                .await
                .unwrap(),
            "queued"
        );
        assert_eq!(gw.remaining(), 0);
    }

    #[tokio::test]
    async fn recorded_error_replays_as_transport_failure() {
        let mut e = TranscriptEntry::scripted(Role::SearchQuery, "");
        e.error = Some("boom".into());
        let gw = ScriptedGateway::from_entries([e]);
        assert!(matches!(
            gw.complete(&GatewayRequest::new(Role::SearchQuery, "x"))
                .await,
            Err(GatewayError::Transport { .. })
        ));
    }
}
