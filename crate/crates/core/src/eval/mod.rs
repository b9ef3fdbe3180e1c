//! Dataset sweeps: run every claim, score with macro-F1, and summarize how
//! plans grew during execution.

mod dataset;
mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

pub use dataset::{
    gold_label, load_dataset, parse_dataset, ClaimRecord, Dataset, DatasetError, DatasetFormat,
    RejectedRecord,
};
pub use metrics::{macro_f1, MetricError};

use crate::executor::{RunResult, RunStats};
use crate::graph::{Mode, NodeType, TypeCounts};
use crate::nodes::Label;

pub const DEFAULT_CLAIM_PARALLELISM: usize = 2;
pub const DEFAULT_HARD_SUBSET: usize = 150;

/// Runs one claim. `claim_dir`, when given, is the claim's artifact directory
/// and already exists.
#[async_trait]
pub trait ClaimRunner: Send + Sync {
    async fn run(
        &self,
        record: &ClaimRecord,
        claim_dir: Option<&Path>,
    ) -> Result<RunResult, String>;
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub parallelism: usize,
    /// Per-claim artifacts go to `<out_dir>/<claim-id>/`.
    pub out_dir: Option<PathBuf>,
    pub dataset_name: String,
    pub mode: Mode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            parallelism: DEFAULT_CLAIM_PARALLELISM,
            out_dir: None,
            dataset_name: String::new(),
            mode: Mode::Dynamic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimOutcome {
    pub id: String,
    pub claim: String,
    pub gold: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hops: Option<u32>,
    pub dataset: DatasetFormat,
    pub predicted: Option<Label>,
    pub forced: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<RunStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_ms: u64,
}

impl ClaimOutcome {
    pub fn completed(&self) -> bool {
        self.predicted.is_some()
    }

    pub fn record(&self) -> ClaimRecord {
        ClaimRecord {
            id: self.id.clone(),
            claim: self.claim.clone(),
            gold: self.gold,
            hops: self.hops,
            dataset: self.dataset,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CountShift {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_: f64,
}

/// Average node counts per type before and after execution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeCountAverages {
    pub search: CountShift,
    pub refine: CountShift,
    pub think: CountShift,
    pub judge: CountShift,
}

impl NodeCountAverages {
    pub fn get(&self, t: NodeType) -> CountShift {
        match t {
            NodeType::Search => self.search,
            NodeType::Refine => self.refine,
            NodeType::Think => self.think,
            NodeType::Judge => self.judge,
        }
    }

    fn from_pairs(pairs: &[(TypeCounts, TypeCounts)]) -> Self {
        let avg = |t: NodeType| {
            if pairs.is_empty() {
                return CountShift::default();
            }
            let n = pairs.len() as f64;
            CountShift {
                initial: pairs.iter().map(|(i, _)| f64::from(i.get(t))).sum::<f64>() / n,
                final_: pairs.iter().map(|(_, f)| f64::from(f.get(t))).sum::<f64>() / n,
            }
        };
        Self {
            search: avg(NodeType::Search),
            refine: avg(NodeType::Refine),
            think: avg(NodeType::Think),
            judge: avg(NodeType::Judge),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopScore {
    pub count: usize,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WallTime {
    pub total_ms: u64,
    pub mean_ms: f64,
    pub max_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub mode: Mode,
    pub total: usize,
    pub completed: usize,
    pub failed: usize,
    pub macro_f1: Option<f64>,
    pub per_hop: BTreeMap<u32, HopScore>,
    /// Verdicts that had to be forced to a binary label.
    pub uncertainty_count: usize,
    pub avg_modifications: f64,
    pub node_counts: NodeCountAverages,
    pub wall_time: WallTime,
    pub claims: Vec<ClaimOutcome>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Aggregates completed outcomes; failed runs are counted but never averaged.
    pub fn from_outcomes(
        dataset: &str,
        mode: Mode,
        claims: Vec<ClaimOutcome>,
        wall_ms: u64,
    ) -> Self {
        let done: Vec<&ClaimOutcome> = claims.iter().filter(|c| c.completed()).collect();
        let score = |subset: &[&ClaimOutcome]| {
            let preds: Vec<Label> = subset.iter().filter_map(|c| c.predicted).collect();
            let golds: Vec<Label> = subset.iter().map(|c| c.gold).collect();
            macro_f1(&preds, &golds).ok()
        };
        let mut hops: BTreeMap<u32, Vec<&ClaimOutcome>> = BTreeMap::new();
        for c in &done {
            if let Some(h) = c.hops {
                hops.entry(h).or_default().push(c);
            }
        }
        let per_hop = hops
            .into_iter()
            .filter_map(|(h, cs)| {
                score(&cs).map(|f| {
                    (
                        h,
                        HopScore {
                            count: cs.len(),
                            macro_f1: f,
                        },
                    )
                })
            })
            .collect();
        let stats: Vec<&RunStats> = done.iter().filter_map(|c| c.stats.as_ref()).collect();
        let pairs: Vec<(TypeCounts, TypeCounts)> = stats
            .iter()
            .map(|s| (s.initial_counts, s.final_counts))
            .collect();
        let avg_modifications = if stats.is_empty() {
            0.0
        } else {
            stats
                .iter()
                .map(|s| f64::from(s.modification_count))
                .sum::<f64>()
                / stats.len() as f64
        };
        let walls: Vec<u64> = done.iter().map(|c| c.wall_ms).collect();
        let wall_time = WallTime {
            total_ms: wall_ms,
            mean_ms: if walls.is_empty() {
                0.0
            } else {
                walls.iter().sum::<u64>() as f64 / walls.len() as f64
            },
            max_ms: walls.iter().copied().max().unwrap_or(0),
        };
        Self {
            dataset: dataset.to_string(),
            mode,
            total: claims.len(),
            completed: done.len(),
            failed: claims.len() - done.len(),
            macro_f1: score(&done),
            per_hop,
            uncertainty_count: done.iter().filter(|c| c.forced).count(),
            avg_modifications,
            node_counts: NodeCountAverages::from_pairs(&pairs),
            wall_time,
            claims,
            warnings: Vec::new(),
        }
    }

    /// Human-readable summary with one "initial → final" row per node type.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let name = if self.dataset.is_empty() {
            "dataset"
        } else {
            &self.dataset
        };
        let _ = writeln!(out, "{name} ({} mode)", self.mode);
        let _ = writeln!(
            out,
            "Claims: {} ({} completed, {} failed)",
            self.total, self.completed, self.failed
        );
        match self.macro_f1 {
            Some(f) => {
                let _ = writeln!(out, "Macro-F1: {:.2}", f * 100.0);
            }
            None => {
                let _ = writeln!(out, "Macro-F1: n/a");
            }
        }
        for (h, s) in &self.per_hop {
            let _ = writeln!(
                out,
                "  {h}-hop: {:.2} ({} claims)",
                s.macro_f1 * 100.0,
                s.count
            );
        }
        let _ = writeln!(out, "Uncertain predictions: {}", self.uncertainty_count);
        let _ = writeln!(out, "Average modifications: {:.2}", self.avg_modifications);
        let _ = writeln!(out, "{:<8} {:>7}   {:>7}", "Node", "Initial", "Final");
        for t in NodeType::ALL {
            let s = self.node_counts.get(t);
            let _ = writeln!(
                out,
                "{:<8} {:>7.2} → {:>7.2}",
                t.as_str(),
                s.initial,
                s.final_
            );
        }
        let _ = writeln!(
            out,
            "Wall time: mean {:.0} ms, max {} ms, total {} ms",
            self.wall_time.mean_ms, self.wall_time.max_ms, self.wall_time.total_ms
        );
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Directory name for a claim id: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn claim_dir_name(id: &str) -> String {
    let name: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    match name.as_str() {
        "" | "." | ".." => format!("claim_{name}"),
        _ => name,
    }
}

/// Runs every record with at most `parallelism` claims in flight. A failing
/// claim is recorded and the sweep carries on.
pub async fn run_eval(
    records: &[ClaimRecord],
    runner: &dyn ClaimRunner,
    opts: &EvalOptions,
) -> EvalReport {
    let t0 = Instant::now();
    let outcomes: Vec<ClaimOutcome> = stream::iter(records.iter())
        .map(|record| run_one(record, runner, opts))
        .buffered(opts.parallelism.max(1))
        .collect()
        .await;
    EvalReport::from_outcomes(
        &opts.dataset_name,
        opts.mode,
        outcomes,
        t0.elapsed().as_millis() as u64,
    )
}

async fn run_one(
    record: &ClaimRecord,
    runner: &dyn ClaimRunner,
    opts: &EvalOptions,
) -> ClaimOutcome {
    let t0 = Instant::now();
    let dir = opts
        .out_dir
        .as_ref()
        .map(|d| d.join(claim_dir_name(&record.id)));
    let result = match &dir {
        Some(d) => match std::fs::create_dir_all(d) {
            Ok(()) => runner.run(record, Some(d)).await,
            Err(e) => Err(format!("cannot create {}: {e}", d.display())),
        },
        None => runner.run(record, None).await,
    };
    let wall_ms = t0.elapsed().as_millis() as u64;
    let base = ClaimOutcome {
        id: record.id.clone(),
        claim: record.claim.clone(),
        gold: record.gold,
        hops: record.hops,
        dataset: record.dataset,
        predicted: None,
        forced: false,
        correct: false,
        stats: None,
        error: None,
        wall_ms,
    };
    match result {
        Ok(run) => {
            if let Some(d) = &dir {
                if let Err(e) = std::fs::write(d.join("result.json"), run.to_canonical_json()) {
                    tracing::warn!(claim = %record.id, error = %e, "cannot persist result");
                }
            }
            let label = run.verdict.label;
            ClaimOutcome {
                predicted: Some(label),
                forced: run.verdict.forced,
                correct: label == record.gold,
                stats: Some(run.stats),
                ..base
            }
        }
        Err(e) => {
            tracing::warn!(claim = %record.id, error = %e, "claim failed");
            ClaimOutcome {
                error: Some(e),
                ..base
            }
        }
    }
}

/// The first `n` claims predicted incorrectly, in dataset order, plus a
/// warning when fewer than `n` exist.
pub fn select_hard_subset(
    outcomes: &[ClaimOutcome],
    n: usize,
) -> (Vec<ClaimRecord>, Option<String>) {
    let hard: Vec<ClaimRecord> = outcomes
        .iter()
        .filter(|c| c.completed() && !c.correct)
        .take(n)
        .map(ClaimOutcome::record)
        .collect();
    let warning = (hard.len() < n).then(|| {
        format!(
            "only {} incorrectly predicted claims available, {n} requested",
            hard.len()
        )
    });
    (hard, warning)
}
