//! Settings resolution: flags > environment > config file > defaults. Clap
//! handles the first two; this module layers the file and defaults underneath.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use factgraph_core::executor::RunConfig;
use factgraph_core::graph::{GraftMode, Mode};
use factgraph_core::planner::PlanConstraints;
use factgraph_core::retrieval::Strategy;

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// static (local corpus, no modifications) or dynamic (web search, grafts)
    #[arg(long, env = "FACTGRAPH_MODE", value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Maximum graph modifications per claim [default: 3 dynamic, 0 static]
    #[arg(long, env = "FACTGRAPH_BUDGET")]
    pub budget: Option<u32>,
    /// Maximum nodes running at once [default: 4]
    #[arg(long, env = "FACTGRAPH_MAX_INFLIGHT")]
    pub max_inflight: Option<usize>,
    /// Per-node timeout in seconds [default: 60]
    #[arg(long, env = "FACTGRAPH_NODE_TIMEOUT")]
    pub node_timeout: Option<f64>,
    /// wiki (BM25 over --corpus) or web [default: wiki static, web dynamic]
    #[arg(long, env = "FACTGRAPH_STRATEGY", value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// rewire (resume the original plan) or replace [default: rewire]
    #[arg(long, env = "FACTGRAPH_GRAFT_MODE", value_parser = parse_graft_mode)]
    pub graft_mode: Option<GraftMode>,
    /// Results kept per search [default: 10]
    #[arg(long, env = "FACTGRAPH_TOP_K")]
    pub top_k: Option<usize>,
    /// Maximum nodes in one generated plan [default: 12]
    #[arg(long, env = "FACTGRAPH_MAX_NODES")]
    pub max_nodes: Option<usize>,
    /// Paragraph corpus, JSONL with {id, title, text} per line
    #[arg(long, env = "FACTGRAPH_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Offline web search: directory of <sha256(query)>.json result files
    #[arg(long, env = "FACTGRAPH_SEARCH_FIXTURES")]
    pub search_fixtures: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates
    #[arg(long, env = "FACTGRAPH_PROMPTS")]
    pub prompts: Option<PathBuf>,
    /// Chat-completions URL of the LLM service
    #[arg(long, env = "FACTGRAPH_LLM_ENDPOINT")]
    pub llm_endpoint: Option<String>,
    /// Model name sent to the LLM service
    #[arg(long, env = "FACTGRAPH_LLM_MODEL")]
    pub llm_model: Option<String>,
    /// Web search API URL
    #[arg(long, env = "FACTGRAPH_SEARCH_ENDPOINT")]
    pub search_endpoint: Option<String>,
}

/// Keys accepted in the TOML config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<String>,
    pub budget: Option<u32>,
    pub max_inflight: Option<usize>,
    pub node_timeout: Option<f64>,
    pub strategy: Option<String>,
    pub graft_mode: Option<String>,
    pub top_k: Option<usize>,
    pub max_nodes: Option<usize>,
    pub corpus: Option<PathBuf>,
    pub search_fixtures: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
    pub search_endpoint: Option<String>,
    pub parallel: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: Self =
            toml::from_str(&raw).with_context(|| format!("invalid config {}", path.display()))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: Option<PathBuf>| p.map(|p| if p.is_relative() { base.join(p) } else { p });
        Ok(Self {
            corpus: rebase(cfg.corpus.clone()),
            search_fixtures: rebase(cfg.search_fixtures.clone()),
            prompts: rebase(cfg.prompts.clone()),
            ..cfg
        })
    }
}

/// Fully resolved settings; recorded in each run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub run: RunConfig,
    pub max_nodes: usize,
    pub corpus: Option<PathBuf>,
    pub search_fixtures: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    #[serde(skip)]
    pub llm_endpoint: Option<String>,
    #[serde(skip)]
    pub llm_model: Option<String>,
    #[serde(skip)]
    pub search_endpoint: Option<String>,
    #[serde(skip)]
    pub parallel: Option<usize>,
}

impl Settings {
    pub fn resolve(args: &RunArgs, file: &FileConfig) -> Result<Self> {
        let mode = match (&args.mode, &file.mode) {
            (Some(m), _) => *m,
            (None, Some(s)) => parse_mode(s).map_err(anyhow::Error::msg)?,
            (None, None) => Mode::Dynamic,
        };
        let defaults = RunConfig::for_mode(mode);
        let strategy = match (&args.strategy, &file.strategy) {
            (Some(s), _) => *s,
            (None, Some(s)) => parse_strategy(s).map_err(anyhow::Error::msg)?,
            (None, None) => defaults.strategy,
        };
        let graft_mode = match (&args.graft_mode, &file.graft_mode) {
            (Some(g), _) => *g,
            (None, Some(s)) => parse_graft_mode(s).map_err(anyhow::Error::msg)?,
            (None, None) => defaults.graft_mode,
        };
        let timeout = args.node_timeout.or(file.node_timeout);
        let node_timeout_ms = match timeout {
            Some(secs) if secs.is_finite() && secs > 0.0 => {
                Duration::from_secs_f64(secs).as_millis() as u64
            }
            Some(secs) => bail!("node timeout must be a positive number of seconds, got {secs}"),
            None => defaults.node_timeout_ms,
        };
        let run = RunConfig {
            mode,
            budget: args.budget.or(file.budget).unwrap_or(defaults.budget),
            max_inflight: args
                .max_inflight
                .or(file.max_inflight)
                .unwrap_or(defaults.max_inflight),
            node_timeout_ms,
            strategy,
            graft_mode,
            top_k: args.top_k.or(file.top_k).unwrap_or(defaults.top_k),
        };
        run.check()?;
        let max_nodes = args
            .max_nodes
            .or(file.max_nodes)
            .unwrap_or(PlanConstraints::default().max_nodes);
        if max_nodes < 2 {
            bail!("max_nodes must be at least 2");
        }
        Ok(Self {
            run,
            max_nodes,
            corpus: args.corpus.clone().or_else(|| file.corpus.clone()),
            search_fixtures: args
                .search_fixtures
                .clone()
                .or_else(|| file.search_fixtures.clone()),
            prompts: args.prompts.clone().or_else(|| file.prompts.clone()),
            llm_endpoint: args
                .llm_endpoint
                .clone()
                .or_else(|| file.llm_endpoint.clone()),
            llm_model: args.llm_model.clone().or_else(|| file.llm_model.clone()),
            search_endpoint: args
                .search_endpoint
                .clone()
                .or_else(|| file.search_endpoint.clone()),
            parallel: file.parallel,
        })
    }

    pub fn constraints(&self) -> PlanConstraints {
        PlanConstraints {
            max_nodes: self.max_nodes,
            ..PlanConstraints::default()
        }
    }
}

pub fn parse_mode(s: &str) -> Result<Mode, String> {
    match s.to_ascii_lowercase().as_str() {
        "static" => Ok(Mode::Static),
        "dynamic" => Ok(Mode::Dynamic),
        _ => Err(format!("unknown mode {s:?} (expected static or dynamic)")),
    }
}

pub fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s.to_ascii_lowercase().as_str() {
        "wiki" => Ok(Strategy::Wiki),
        "web" => Ok(Strategy::Web),
        _ => Err(format!("unknown strategy {s:?} (expected wiki or web)")),
    }
}

pub fn parse_graft_mode(s: &str) -> Result<GraftMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "rewire" => Ok(GraftMode::Rewire),
        "replace" => Ok(GraftMode::Replace),
        _ => Err(format!(
            "unknown graft mode {s:?} (expected rewire or replace)"
        )),
    }
}
