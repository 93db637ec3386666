//! `promptsens` command-line driver.
//!
//! Exit status is 0 on success, 1 on invalid input or a failed validation
//! and 2 on budget exhaustion or transport failure. Diagnostics go to stderr
//! as one JSON object per line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use promptsens::eval::{CannedInference, InferenceClient};
use promptsens::http::{ChatClient, HttpEmbedder, HttpEndpoint};
use promptsens::mutator::{MutatorClient, SyntheticMutator, TranscriptClient};
use promptsens::store::{self, OracleConfig, RunConfig, RunStore, StoreError};
use promptsens::util::sha256_hex;
use promptsens::validation::{EmbeddingClient, StubEmbedder};
use promptsens::MetaTemplate;

#[derive(Parser)]
#[command(
    name = "promptsens",
    version,
    about = "Prompt template mutation and sensitivity analysis"
)]
struct Cli {
    /// Run configuration (JSON); required when the run does not exist yet.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding run directories.
    #[arg(long, global = true, default_value = "runs")]
    runs_dir: PathBuf,
    #[arg(long, global = true, default_value = "default")]
    run_id: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Exact,
    Normalized,
    Command,
    Replay,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a meta-template document.
    ValidateMeta { path: PathBuf },
    /// Grow the template pool.
    Mutate {
        #[arg(long)]
        threshold: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// `synthetic` or a JSONL transcript of mutator responses.
        #[arg(long)]
        mock_mutator: Option<String>,
    },
    /// Write the paraphrase review report.
    Review,
    /// Query the evaluated models with every template and instance.
    Run {
        #[arg(long)]
        concurrency: Option<usize>,
        /// JSONL of canned responses.
        #[arg(long)]
        mock_inference: Option<PathBuf>,
    },
    /// Judge the records and aggregate metrics.
    Score {
        #[arg(long, value_enum)]
        oracle: Option<OracleKind>,
    },
    /// Compute all statistics.
    Analyze,
    /// Select a diverse template subset.
    Subset {
        #[arg(long)]
        count: usize,
    },
    /// Write CSV grids and a summary, optionally across further runs.
    Report {
        /// Additional run ids whose analyses join the grids.
        #[arg(long = "with")]
        with: Vec<String>,
    },
}

struct Failure {
    status: u8,
    code: String,
    message: String,
    extra: Value,
}

impl Failure {
    fn validation(code: &str, message: impl Into<String>) -> Self {
        Failure {
            status: 1,
            code: code.into(),
            message: message.into(),
            extra: Value::Null,
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let extra = match &e {
            StoreError::Metric(promptsens::eval::MetricError::IncompleteData { missing }) => {
                json!({ "missing": missing.iter().take(20).collect::<Vec<_>>(), "missing_count": missing.len() })
            }
            _ => Value::Null,
        };
        Failure {
            status: if e.is_runtime_failure() { 2 } else { 1 },
            code: e.code().into(),
            message: e.to_string(),
            extra,
        }
    }
}

fn diagnostic(level: &str, code: &str, message: &str, extra: &Value) {
    let mut d = json!({ "level": level, "code": code, "message": message });
    if let Value::Object(map) = extra {
        for (k, v) in map {
            d[k] = v.clone();
        }
    }
    eprintln!("{d}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(f) => {
            diagnostic("error", &f.code, &f.message, &f.extra);
            ExitCode::from(f.status)
        }
    }
}

fn load_config(path: &Path, threshold: Option<usize>, seed: Option<u64>) -> Result<RunConfig, StoreError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(t) = threshold {
        cfg.threshold = t;
    }
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}

fn open(cli: &Cli, threshold: Option<usize>, seed: Option<u64>) -> Result<RunStore, StoreError> {
    let cfg = cli
        .config
        .as_deref()
        .map(|p| load_config(p, threshold, seed))
        .transpose()?;
    let store = store::init_run(&cli.runs_dir, &cli.run_id, cfg.as_ref())?;
    if cfg.is_none() && (threshold.is_some() || seed.is_some()) {
        let stored = store.config()?;
        if threshold.is_some_and(|t| t != stored.threshold) || seed.is_some_and(|s| s != stored.rng_seed) {
            return Err(StoreError::Config(
                "--threshold and --seed cannot change an existing run".into(),
            ));
        }
    }
    Ok(store)
}

fn embedder(cfg: &RunConfig) -> Result<(Box<dyn EmbeddingClient>, String), StoreError> {
    match &cfg.embedding {
        Some(c) => {
            let ep = HttpEndpoint::new(c).map_err(|e| StoreError::Config(e.to_string()))?;
            Ok((
                Box::new(HttpEmbedder::new(ep)),
                format!("http({} @ {})", c.model, c.base_url),
            ))
        }
        None => Ok((Box::new(StubEmbedder::default()), "stub-embedder".into())),
    }
}

fn mutator(cfg: &RunConfig, mock: Option<&str>) -> Result<(Box<dyn MutatorClient>, String), StoreError> {
    match mock {
        Some("synthetic") => Ok((
            Box::new(SyntheticMutator::new(cfg.rng_seed)),
            format!("synthetic(seed={})", cfg.rng_seed),
        )),
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| StoreError::Config(format!("{path}: {e}")))?;
            let client = TranscriptClient::parse_jsonl(&String::from_utf8_lossy(&bytes))
                .map_err(|e| StoreError::Config(e.to_string()))?;
            Ok((Box::new(client), format!("transcript(sha256={})", sha256_hex(&bytes))))
        }
        None => {
            let c = cfg
                .mutator
                .as_ref()
                .ok_or_else(|| StoreError::Config("no mutator configured; pass --mock-mutator".into()))?;
            let ep = HttpEndpoint::new(c).map_err(|e| StoreError::Config(e.to_string()))?;
            Ok((
                Box::new(ChatClient::new(ep)),
                format!("http({} @ {})", c.model, c.base_url),
            ))
        }
    }
}

fn inference(cfg: &RunConfig, mock: Option<&Path>) -> Result<(Box<dyn InferenceClient>, String), StoreError> {
    match mock {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| StoreError::io(path, e))?;
            let client = CannedInference::parse_jsonl(&String::from_utf8_lossy(&bytes)).map_err(StoreError::Config)?;
            Ok((Box::new(client), format!("canned(sha256={})", sha256_hex(&bytes))))
        }
        None => {
            let c = cfg
                .inference
                .as_ref()
                .ok_or_else(|| StoreError::Config("no inference endpoint configured; pass --mock-inference".into()))?;
            let ep = HttpEndpoint::new(c).map_err(|e| StoreError::Config(e.to_string()))?;
            Ok((Box::new(ChatClient::new(ep)), format!("http({})", c.base_url)))
        }
    }
}

fn oracle_config(cfg: &RunConfig, kind: Option<OracleKind>) -> Result<OracleConfig, StoreError> {
    let configured = cfg.oracle.clone();
    Ok(match kind {
        None => configured,
        Some(OracleKind::Exact) => OracleConfig::Exact,
        Some(OracleKind::Normalized) => match configured {
            c @ OracleConfig::Normalized { .. } => c,
            _ => OracleConfig::Normalized { case_insensitive: true },
        },
        Some(OracleKind::Command) => match configured {
            c @ OracleConfig::Command { .. } => c,
            _ => {
                return Err(StoreError::Config(
                    "--oracle command needs `oracle.program` in the config".into(),
                ))
            }
        },
        Some(OracleKind::Replay) => match configured {
            c @ OracleConfig::Replay { .. } => c,
            _ => {
                return Err(StoreError::Config(
                    "--oracle replay needs `oracle.transcript` in the config".into(),
                ))
            }
        },
    })
}

fn run(cli: Cli) -> Result<Value, Failure> {
    match &cli.command {
        Command::ValidateMeta { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::validation("io", format!("{}: {e}", path.display())))?;
            let mt = MetaTemplate::parse(&text).map_err(|e| Failure::from(StoreError::from(e)))?;
            let stale = promptsens::ops::stale_mentions(&mt);
            if let Some(inc) = stale.first() {
                return Err(Failure::validation("inconsistent", inc.reason.clone()));
            }
            Ok(json!({
                "task_id": mt.task_id,
                "nodes": mt.tree.nodes().count(),
                "operations": mt.op_catalog.iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
                "placeholders": mt.tree.placeholders(),
                "rendered": mt.render(),
            }))
        }
        Command::Mutate {
            threshold,
            seed,
            mock_mutator,
        } => {
            let mut store = open(&cli, *threshold, *seed)?;
            let cfg = store.config()?;
            let (mut client, desc) = mutator(&cfg, mock_mutator.as_deref())?;
            let (embed, _) = embedder(&cfg)?;
            let summary = store::mutate_run(&mut store, client.as_mut(), embed.as_ref(), &desc)?;
            Ok(json!({ "run_dir": store.dir(), "mutation": summary }))
        }
        Command::Review => {
            let mut store = open(&cli, None, None)?;
            let cfg = store.config()?;
            let (embed, _) = embedder(&cfg)?;
            let report = store::build_review(&mut store, embed.as_ref())?;
            let paraphrases: usize = report.templates.iter().map(|t| t.paraphrases.len()).sum();
            Ok(json!({
                "templates": report.templates.len(),
                "paraphrases": paraphrases,
                "report": store.path("report/review.txt"),
            }))
        }
        Command::Run {
            concurrency,
            mock_inference,
        } => {
            let mut store = open(&cli, None, None)?;
            let cfg = store.config()?;
            let (client, desc) = inference(&cfg, mock_inference.as_deref())?;
            let out = store::run_inference(&mut store, client.as_ref(), &desc, *concurrency)?;
            if !out.failed.is_empty() {
                for coord in out.failed.iter().take(20) {
                    diagnostic("warning", "failed_generation", coord, &Value::Null);
                }
                return Err(Failure {
                    status: 2,
                    code: "transport".into(),
                    message: format!("{} generation(s) failed; rerun `run` to retry them", out.failed.len()),
                    extra: json!({ "failed_count": out.failed.len() }),
                });
            }
            Ok(serde_json::to_value(out).unwrap_or_default())
        }
        Command::Score { oracle } => {
            let mut store = open(&cli, None, None)?;
            let cfg = store.config()?;
            let oc = oracle_config(&cfg, *oracle)?;
            let judge = store::build_oracle(&oc)?;
            let metrics = store::score_run(&mut store, judge.as_ref(), oc.name())?;
            Ok(json!({ "metric": metrics.metric.to_string(), "series": metrics.series }))
        }
        Command::Analyze => {
            let mut store = open(&cli, None, None)?;
            let analysis = store::analyze_run(&mut store)?;
            Ok(serde_json::to_value(analysis).unwrap_or_default())
        }
        Command::Subset { count } => {
            let mut store = open(&cli, None, None)?;
            let selection = store::subset_run(&mut store, *count)?;
            Ok(serde_json::to_value(selection).unwrap_or_default())
        }
        Command::Report { with } => {
            let mut store = open(&cli, None, None)?;
            let mut others = Vec::new();
            for id in with {
                let other = RunStore::open(&cli.runs_dir.join(id))?;
                others.push(other.read_json(store::ANALYSIS_FILE)?);
            }
            let summary = store::write_report(&mut store, &others)?;
            Ok(json!({ "summary": summary, "report_dir": store.path("report") }))
        }
    }
}
