//! `factgraph`: plan, verify, evaluate and replay claim verification runs.
//!
//! Exit codes: 0 success, 1 usage/configuration/I/O/transport error, 2 plan
//! printed from the fallback template, 3 verdict was forced, 4 replay diverged.

mod backend;
mod config;
mod rundir;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use async_trait::async_trait;
use clap::{Args, Parser, Subcommand};

use factgraph_core::eval::{
    claim_dir_name, load_dataset, run_eval, select_hard_subset, ClaimRecord, ClaimRunner,
    DatasetFormat, EvalOptions, EvalReport, DEFAULT_CLAIM_PARALLELISM, DEFAULT_HARD_SUBSET,
};
use factgraph_core::executor::RunResult;
use factgraph_core::gateway::Gateway;
use factgraph_core::planner::Planner;
use factgraph_core::prompts::Prompts;
use factgraph_core::retrieval::{ReplayRetriever, Retriever};

use config::{FileConfig, RunArgs, Settings};
use rundir::{RunManifest, REPLAYED_FILE, RESULT_FILE, RETRIEVAL_FILE, TRANSCRIPT_FILE};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_FALLBACK: u8 = 2;
const EXIT_FORCED: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "factgraph",
    version,
    about = "Verify claims by planning and executing a graph of SEARCH, REFINE, THINK and JUDGE steps",
    after_help = "Exit codes: 0 ok, 1 error, 2 fallback plan, 3 forced verdict, 4 replay divergence.\n\n\
Examples:\n  \
factgraph plan \"Paris is the capital of France.\" --script plan.jsonl\n  \
factgraph verify \"Paris is the capital of France.\" --mode static --corpus wiki.jsonl --script run.jsonl --out runs/paris\n  \
factgraph eval data/hover_dev.jsonl --format hover --limit 50 --out runs\n  \
factgraph replay runs/paris\n\n\
Environment: FACTGRAPH_LLM_ENDPOINT, FACTGRAPH_LLM_MODEL, FACTGRAPH_LLM_API_KEY, \
FACTGRAPH_SEARCH_ENDPOINT, FACTGRAPH_SEARCH_API_KEY, FACTGRAPH_SEARCH_PROXY, and FACTGRAPH_<FLAG> for each run flag."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the initial plan for a claim as canonical graph JSON
    Plan {
        claim: String,
        #[command(flatten)]
        common: Common,
    },
    /// Verify one claim and print its label and explanation
    Verify {
        claim: String,
        /// Directory for the run artifacts
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a labelled dataset and print the summary table
    Eval {
        dataset: PathBuf,
        /// hover, feverous or custom
        #[arg(long, default_value = "custom")]
        format: DatasetFormat,
        /// Run only the first N claims
        #[arg(long)]
        limit: Option<usize>,
        /// Restrict to claims predicted incorrectly in this earlier report.json
        #[arg(long)]
        hard_from: Option<PathBuf>,
        /// Size of the hard subset
        #[arg(long, default_value_t = DEFAULT_HARD_SUBSET)]
        hard_n: usize,
        /// Claims verified at once
        #[arg(long, env = "FACTGRAPH_PARALLEL")]
        parallel: Option<usize>,
        /// Directory of per-claim scripts named <claim-id>.jsonl
        #[arg(long)]
        scripts: Option<PathBuf>,
        /// Root for the report and per-claim run directories
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run a recorded run offline and compare its result byte for byte
    Replay { run_dir: PathBuf },
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Scripted gateway transcript (JSONL) instead of the LLM service
    #[arg(long)]
    script: Option<PathBuf>,
    /// TOML file with defaults for the run flags
    #[arg(long, env = "FACTGRAPH_CONFIG")]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

impl Common {
    fn settings(&self) -> Result<(Settings, FileConfig)> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        Ok((Settings::resolve(&self.run, &file)?, file))
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FACTGRAPH_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    match runtime.block_on(dispatch(cli.command)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

/// Writes one stdout line; a closed pipe is not an error.
fn out(line: &str) {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{line}");
}

async fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Plan { claim, common } => cmd_plan(&claim, &common).await,
        Command::Verify { claim, out, common } => cmd_verify(&claim, out.as_deref(), &common).await,
        Command::Eval {
            dataset,
            format,
            limit,
            hard_from,
            hard_n,
            parallel,
            scripts,
            out,
            common,
        } => {
            let opts = EvalArgs {
                format,
                limit,
                hard_from,
                hard_n,
                parallel,
                scripts,
                out,
            };
            cmd_eval(&dataset, &opts, &common).await
        }
        Command::Replay { run_dir } => cmd_replay(&run_dir).await,
    }
}

async fn cmd_plan(claim: &str, common: &Common) -> Result<u8> {
    let (settings, _) = common.settings()?;
    let gateway = backend::gateway(&settings, common.script.as_deref())?;
    let planner = Planner::new(gateway, backend::load_prompts(&settings)?)
        .with_constraints(settings.constraints());
    let plan = planner.initial(claim, settings.run.mode).await?;
    for r in &plan.rejections {
        eprintln!("rejected plan: {r}");
    }
    out(&plan.graph.to_canonical_json());
    Ok(if plan.fallback_used {
        EXIT_FALLBACK
    } else {
        EXIT_OK
    })
}

async fn cmd_verify(claim: &str, out_dir: Option<&Path>, common: &Common) -> Result<u8> {
    let (settings, _) = common.settings()?;
    let retriever = backend::retriever(&settings)?;
    let gateway = backend::gateway(&settings, common.script.as_deref())?;
    let prompts = backend::load_prompts(&settings)?;
    let result =
        rundir::recorded_run(claim, &settings, gateway, retriever, prompts, out_dir).await?;
    out(&result.verdict.label.to_string());
    out(&result.verdict.explanation.replace('\n', " "));
    Ok(if result.verdict.forced {
        EXIT_FORCED
    } else {
        EXIT_OK
    })
}

struct EvalArgs {
    format: DatasetFormat,
    limit: Option<usize>,
    hard_from: Option<PathBuf>,
    hard_n: usize,
    parallel: Option<usize>,
    scripts: Option<PathBuf>,
    out: PathBuf,
}

struct CliRunner {
    settings: Settings,
    scripts: Option<PathBuf>,
    gateway: Option<Arc<dyn Gateway>>,
    retriever: Arc<dyn Retriever>,
    prompts: Arc<Prompts>,
}

#[async_trait]
impl ClaimRunner for CliRunner {
    async fn run(
        &self,
        record: &ClaimRecord,
        claim_dir: Option<&Path>,
    ) -> Result<RunResult, String> {
        let gateway = match (&self.scripts, &self.gateway) {
            (Some(dir), _) => backend::scripted_gateway(
                &dir.join(format!("{}.jsonl", claim_dir_name(&record.id))),
            )
            .map_err(|e| format!("{e:#}"))?,
            (None, Some(g)) => g.clone(),
            (None, None) => return Err("no gateway configured".into()),
        };
        rundir::recorded_run(
            &record.claim,
            &self.settings,
            gateway,
            self.retriever.clone(),
            self.prompts.clone(),
            claim_dir,
        )
        .await
        .map_err(|e| format!("{e:#}"))
    }
}

async fn cmd_eval(dataset: &Path, args: &EvalArgs, common: &Common) -> Result<u8> {
    let (settings, file) = common.settings()?;
    let loaded = load_dataset(dataset, args.format)?;
    let mut warnings: Vec<String> = loaded
        .rejected
        .iter()
        .map(|r| format!("line {} (record {}) skipped: {}", r.line, r.id, r.reason))
        .collect();
    let mut records = loaded.records;
    if let Some(path) = &args.hard_from {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let earlier: EvalReport = serde_json::from_str(&raw)
            .with_context(|| format!("invalid report {}", path.display()))?;
        let (hard, warning) = select_hard_subset(&earlier.claims, args.hard_n);
        let ids: HashSet<String> = hard.into_iter().map(|r| r.id).collect();
        records.retain(|r| ids.contains(&r.id));
        warnings.extend(warning);
        if records.is_empty() {
            warnings.push("hard subset is empty; nothing to run".into());
        }
    }
    if let Some(n) = args.limit {
        records.truncate(n);
    }
    let retriever = backend::retriever(&settings)?;
    let gateway = match &args.scripts {
        Some(_) => None,
        None => Some(backend::remote_gateway(&settings)?),
    };
    let stem = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let out_dir = args.out.join(claim_dir_name(&stem));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let runner = CliRunner {
        prompts: backend::load_prompts(&settings)?,
        settings: settings.clone(),
        scripts: args.scripts.clone(),
        gateway,
        retriever,
    };
    let opts = EvalOptions {
        parallelism: args
            .parallel
            .or(file.parallel)
            .unwrap_or(DEFAULT_CLAIM_PARALLELISM),
        out_dir: Some(out_dir.clone()),
        dataset_name: stem,
        mode: settings.run.mode,
    };
    let mut report = run_eval(&records, &runner, &opts).await;
    report.warnings.extend(warnings);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for c in report.claims.iter().filter(|c| !c.completed()) {
        eprintln!(
            "claim {} failed: {}",
            c.id,
            c.error.as_deref().unwrap_or("unknown error")
        );
    }
    let path = out_dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    out(report.table().trim_end());
    Ok(EXIT_OK)
}

async fn cmd_replay(dir: &Path) -> Result<u8> {
    let manifest = RunManifest::load(dir)?;
    let expected_path = dir.join(RESULT_FILE);
    let expected = std::fs::read_to_string(&expected_path)
        .with_context(|| format!("cannot read {}", expected_path.display()))?;
    let gateway = backend::scripted_gateway(&dir.join(TRANSCRIPT_FILE))?;
    let retrieval_path = dir.join(RETRIEVAL_FILE);
    let retriever: Arc<dyn Retriever> = Arc::new(
        ReplayRetriever::load(manifest.settings.run.strategy, &retrieval_path)
            .map_err(|e| anyhow!(e))?,
    );
    let prompts = backend::load_prompts(&manifest.settings)?;
    let engine = backend::engine(&manifest.settings, gateway, retriever, prompts)?;
    let replayed = match engine.run_claim(&manifest.claim).await {
        Ok(result) => result.to_canonical_json(),
        Err(e) => {
            out("DIVERGED run");
            eprintln!("replay failed: {e}");
            return Ok(EXIT_DIVERGED);
        }
    };
    if replayed == expected {
        out("IDENTICAL");
        return Ok(EXIT_OK);
    }
    let dump = dir.join(REPLAYED_FILE);
    if let Err(e) = std::fs::write(&dump, &replayed) {
        eprintln!("cannot write {}: {e}", dump.display());
    }
    let path = match (
        serde_json::from_str(&expected),
        serde_json::from_str(&replayed),
    ) {
        (Ok(a), Ok(b)) => {
            rundir::first_difference(&a, &b).unwrap_or_else(|| "$ (formatting)".into())
        }
        _ => "$".into(),
    };
    out(&format!("DIVERGED {path}"));
    Ok(EXIT_DIVERGED)
}
