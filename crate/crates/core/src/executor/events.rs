use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::gateway::{Gateway, GatewayError, GatewayRequest};
use crate::graph::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RunStart,
    Plan,
    NodeStart,
    NodeFinish,
    NodeFailed,
    GatewayCall,
    Skip,
    Graft,
    GraftRejected,
    BudgetExhausted,
    ForcedJudgment,
    RunFinish,
}

/// One line of the event stream; `ts` is milliseconds since the run started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub ts: u64,
    pub event: EventKind,
    pub node_id: Option<NodeId>,
    pub detail: Value,
}

/// Ordered, thread-safe event sink, optionally mirrored line by line to a file.
pub struct EventLog {
    started: Instant,
    inner: Mutex<(Vec<Event>, Option<BufWriter<File>>)>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        Self {
            started: Instant::now(),
            inner: Mutex::new((Vec::new(), None)),
        }
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let log = Self::new();
        log.inner.lock().unwrap().1 = Some(BufWriter::new(File::create(path)?));
        Ok(log)
    }

    pub fn emit(&self, event: EventKind, node_id: Option<&NodeId>, detail: Value) {
        let ev = Event {
            ts: self.started.elapsed().as_millis() as u64,
            event,
            node_id: node_id.cloned(),
            detail,
        };
        let mut guard = self.inner.lock().unwrap();
        if let Some(w) = guard.1.as_mut() {
            let line = serde_json::to_string(&ev).expect("event serializes");
            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                tracing::warn!(error = %e, "cannot write event stream");
            }
        }
        guard.0.push(ev);
    }

    pub fn events(&self) -> Vec<Event> {
        self.inner.lock().unwrap().0.clone()
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }
}

/// Counts calls and reports each one to the run's event log.
pub(crate) struct ObservedGateway {
    inner: Arc<dyn Gateway>,
    log: Arc<EventLog>,
    calls: AtomicU32,
}

impl ObservedGateway {
    pub(crate) fn new(inner: Arc<dyn Gateway>, log: Arc<EventLog>) -> Self {
        Self {
            inner,
            log,
            calls: AtomicU32::new(0),
        }
    }

    pub(crate) fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Gateway for ObservedGateway {
    async fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let result = self.inner.complete(request).await;
        self.log.emit(
            EventKind::GatewayCall,
            None,
            json!({
                "role": request.role,
                "digest": request.digest(),
                "ok": result.is_ok(),
            }),
        );
        result
    }
}
