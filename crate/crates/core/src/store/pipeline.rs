use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::analysis::{analyze_metrics, heatmap_csv, iou_csv, subset_notes, Analysis, HeatmapKind, SubsetSelection};
use super::config::{load_instances, OracleConfig, RunConfig};
use super::review::ReviewReport;
use super::{RunStore, StoreError, ANALYSIS_FILE, LINEAGE_FILE, METRICS_FILE, RECORDS_FILE, SCHEMA_VERSION};
use crate::eval::{
    compute_series, judge_records, run_task, sort_records, Adapter, CommandOracle, EvalRecord, ExactOracle,
    InferenceClient, MetricError, MetricKind, MetricSeries, NormalizedOracle, Oracle, ReplayOracle, RunSummary,
    TaskRun,
};
use crate::mutator::{run_mutation_loop_with, MutatorClient, Pool};
use crate::stats::{distinct_op_kinds, percentage_deltas, select_diverse_subset, two_way_anova};
use crate::template::MetaTemplate;
use crate::util::to_canonical_string;
use crate::validation::EmbeddingClient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationSummary {
    pub threshold: usize,
    pub iterations: u64,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub mean_lineage_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: u32,
    pub task_id: String,
    pub metric: MetricKind,
    pub num_generations: u32,
    pub templates: usize,
    pub instances: Vec<String>,
    pub oracle: String,
    pub series: Vec<MetricSeries>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InferenceOutcome {
    pub summary: RunSummary,
    pub expected_records: u64,
    pub stored_records: u64,
    /// Coordinates whose latest generation failed.
    pub failed: Vec<String>,
    pub complete: bool,
}

/// Opens `runs_dir/run_id`, creating it with `cfg` when absent. An existing
/// run must have been created with an identical configuration.
pub fn init_run(runs_dir: &Path, run_id: &str, cfg: Option<&RunConfig>) -> Result<RunStore, StoreError> {
    if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
        return Err(StoreError::Config(format!("invalid run id `{run_id}`")));
    }
    let dir = runs_dir.join(run_id);
    if dir.join(super::MANIFEST_FILE).exists() {
        let store = RunStore::open(&dir)?;
        if let Some(cfg) = cfg {
            let text = to_canonical_string(cfg).map_err(|e| StoreError::Config(e.to_string()))?;
            if crate::util::sha256_hex(text.as_bytes()) != store.manifest().config_sha256 {
                return Err(StoreError::Config(format!(
                    "run `{run_id}` exists with a different configuration"
                )));
            }
        }
        return Ok(store);
    }
    let cfg = cfg.ok_or_else(|| StoreError::Missing(format!("run `{run_id}` does not exist; pass a config")))?;
    cfg.check()?;
    RunStore::create(&dir, run_id, cfg)
}

fn pool_file(i: usize) -> String {
    format!("pool/{i:03}.json")
}

fn load_seed(cfg: &RunConfig) -> Result<MetaTemplate, StoreError> {
    let text = std::fs::read_to_string(&cfg.meta_template).map_err(|e| StoreError::io(&cfg.meta_template, e))?;
    Ok(MetaTemplate::parse(&text)?)
}

/// Grows the pool and persists it together with the iteration log.
pub fn mutate_run(
    store: &mut RunStore,
    client: &mut dyn MutatorClient,
    embedder: &dyn EmbeddingClient,
    client_desc: &str,
) -> Result<MutationSummary, StoreError> {
    if store.manifest().mutation.is_some() {
        return Err(StoreError::Config("the pool of this run is already complete".into()));
    }
    let cfg = store.config()?;
    let seed = load_seed(&cfg)?;
    let mut loop_cfg = cfg.loop_config.clone();
    loop_cfg.budget.rng_seed = cfg.rng_seed;
    store.update_manifest(|m| {
        m.clients.insert("mutator".into(), client_desc.to_string());
    })?;
    store.rewrite_log(LINEAGE_FILE, &[])?;

    let mut log_error = None;
    let mut iterations = 0u64;
    let result = run_mutation_loop_with(seed, cfg.threshold, client, embedder, &loop_cfg, &mut |record, _| {
        iterations += 1;
        if log_error.is_none() {
            if let Err(e) = store.append_json(LINEAGE_FILE, std::slice::from_ref(record)) {
                log_error = Some(e);
            }
        }
    });
    if let Some(e) = log_error {
        return Err(e);
    }
    let pool = result?;
    for (i, member) in pool.members.iter().enumerate() {
        store.write_file(&pool_file(i), member.to_document().as_bytes())?;
    }
    let accepted = pool.members.len() - 1;
    let summary = MutationSummary {
        threshold: cfg.threshold,
        iterations,
        accepted,
        acceptance_rate: if iterations == 0 {
            0.0
        } else {
            accepted as f64 / iterations as f64
        },
        mean_lineage_len: pool.mean_lineage_len(),
    };
    store.update_manifest(|m| m.mutation = Some(summary.clone()))?;
    Ok(summary)
}

pub fn load_pool(store: &RunStore) -> Result<Pool, StoreError> {
    let summary = store
        .manifest()
        .mutation
        .clone()
        .ok_or_else(|| StoreError::Missing("no pool; run `mutate` first".into()))?;
    let mut members = Vec::with_capacity(summary.accepted + 1);
    for i in 0..=summary.accepted {
        let bytes = store.read_committed(&pool_file(i))?;
        let text = String::from_utf8(bytes).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        members.push(MetaTemplate::parse(&text)?);
    }
    Ok(Pool {
        members,
        threshold: summary.threshold,
    })
}

/// Committed records, the latest line winning per coordinate, sorted.
fn latest_records(store: &RunStore) -> Result<Vec<EvalRecord>, StoreError> {
    if !store.has(RECORDS_FILE) {
        return Ok(Vec::new());
    }
    let mut latest = BTreeMap::new();
    for r in store.read_log_json::<EvalRecord>(RECORDS_FILE)? {
        latest.insert(r.coordinate(), r);
    }
    let mut out: Vec<EvalRecord> = latest.into_values().collect();
    sort_records(&mut out);
    Ok(out)
}

/// (template, instance) units of `model` still to be requested: missing
/// samples or a failed latest generation.
pub fn inference_units(store: &RunStore, model: &str) -> Result<Vec<(usize, String)>, StoreError> {
    let cfg = store.config()?;
    let pool = load_pool(store)?;
    let instances = load_instances(&cfg.instances)?;
    let n = cfg.sampling_params()?.num_generations;
    let done = done_units(&latest_records(store)?, n);
    let mut out = Vec::new();
    for t in 0..pool.members.len() {
        for inst in &instances {
            if !done.contains(&(model.to_string(), t, inst.instance_id.clone())) {
                out.push((t, inst.instance_id.clone()));
            }
        }
    }
    Ok(out)
}

fn done_units(records: &[EvalRecord], n: u32) -> HashSet<(String, usize, String)> {
    let mut good: HashMap<(String, usize, String), u32> = HashMap::new();
    for r in records {
        if r.error.is_none() && r.sample_idx < n {
            *good
                .entry((r.model_id.clone(), r.template_id, r.instance_id.clone()))
                .or_default() += 1;
        }
    }
    good.into_iter().filter(|(_, c)| *c == n).map(|(k, _)| k).collect()
}

/// Runs every outstanding (model, template, instance) unit and appends the
/// records. Once every coordinate has a successful generation the log is
/// rewritten in sorted order.
pub fn run_inference(
    store: &mut RunStore,
    client: &dyn InferenceClient,
    client_desc: &str,
    concurrency: Option<usize>,
) -> Result<InferenceOutcome, StoreError> {
    let cfg = store.config()?;
    let pool = load_pool(store)?;
    let instances = load_instances(&cfg.instances)?;
    let params = cfg.sampling_params()?;
    let templates: Vec<String> = pool.members.iter().map(MetaTemplate::render).collect();
    let expected = (cfg.models.len() * templates.len() * instances.len()) as u64 * u64::from(params.num_generations);
    store.update_manifest(|m| {
        m.clients.insert("inference".into(), client_desc.to_string());
        m.expected_records = Some(expected);
    })?;
    if !store.has(RECORDS_FILE) {
        store.rewrite_log(RECORDS_FILE, &[])?;
    }

    let done = done_units(&latest_records(store)?, params.num_generations);
    let mut total = RunSummary::default();
    for model in &cfg.models {
        let model_done: HashSet<(usize, String)> = done
            .iter()
            .filter(|(m, _, _)| m == model)
            .map(|(_, t, i)| (*t, i.clone()))
            .collect();
        let run = TaskRun {
            task_id: &cfg.task_id,
            model_id: model,
            templates: &templates,
            instances: &instances,
            params,
            concurrency: concurrency.unwrap_or(cfg.concurrency),
            retries: cfg.inference_retries,
        };
        let mut sink_error = None;
        let summary = run_task(&run, client, &model_done, &mut |records| {
            store.append_json(RECORDS_FILE, &records).map_err(|e| {
                let io = std::io::Error::other(e.to_string());
                sink_error = Some(e);
                io
            })
        });
        if let Some(e) = sink_error {
            return Err(e);
        }
        let s = summary?;
        total.requests += s.requests;
        total.records += s.records;
        total.failed_generations += s.failed_generations;
        total.skipped_units += s.skipped_units;
    }

    let records = latest_records(store)?;
    let failed: Vec<String> = records
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.coordinate().to_string())
        .collect();
    let complete = records.len() as u64 == expected && failed.is_empty();
    if complete {
        let lines = records
            .iter()
            .map(|r| serde_json::to_string(r).map_err(|e| StoreError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        store.rewrite_log(RECORDS_FILE, &lines)?;
    }
    store.update_manifest(|m| m.inference_complete = complete)?;
    Ok(InferenceOutcome {
        summary: total,
        expected_records: expected,
        stored_records: records.len() as u64,
        failed,
        complete,
    })
}

/// Builds the oracle selected in the configuration.
pub fn build_oracle(cfg: &OracleConfig) -> Result<Box<dyn Oracle>, StoreError> {
    Ok(match cfg {
        OracleConfig::Exact => Box::new(ExactOracle),
        OracleConfig::Normalized { case_insensitive } => Box::new(NormalizedOracle {
            case_insensitive: *case_insensitive,
        }),
        OracleConfig::Command {
            program,
            args,
            timeout_s,
        } => {
            let mut o = CommandOracle::new(program.clone(), args.clone());
            o.timeout = Duration::from_secs(*timeout_s);
            Box::new(o)
        }
        OracleConfig::Replay { transcript } => Box::new(ReplayOracle::load(transcript).map_err(StoreError::Config)?),
    })
}

/// Judges every record, rewrites the record log with the verdicts and
/// writes the metric series.
pub fn score_run(store: &mut RunStore, oracle: &dyn Oracle, oracle_name: &str) -> Result<MetricsFile, StoreError> {
    let cfg = store.config()?;
    let pool = load_pool(store)?;
    let instances = load_instances(&cfg.instances)?;
    let params = cfg.sampling_params()?;
    let metric = cfg.metric_kind()?;
    let mut records = latest_records(store)?;
    let ids: Vec<String> = instances.iter().map(|i| i.instance_id.clone()).collect();

    let expected = (cfg.models.len() * pool.members.len() * ids.len()) as u64 * u64::from(params.num_generations);
    if (records.len() as u64) < expected {
        return Err(MetricError::IncompleteData {
            missing: vec![format!(
                "{} of {expected} records present; finish `run` first",
                records.len()
            )],
        }
        .into());
    }
    let adapters: Vec<Adapter> = pool
        .members
        .iter()
        .map(|m| Adapter::for_template(&cfg.adapter, m))
        .collect();
    judge_records(&mut records, &adapters, &instances, oracle);
    let series = compute_series(
        &cfg.task_id,
        &records,
        &cfg.models,
        pool.members.len(),
        &ids,
        params.num_generations,
        metric,
    )?;
    let lines = records
        .iter()
        .map(|r| serde_json::to_string(r).map_err(|e| StoreError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    store.rewrite_log(RECORDS_FILE, &lines)?;
    let metrics = MetricsFile {
        schema_version: SCHEMA_VERSION,
        task_id: cfg.task_id.clone(),
        metric,
        num_generations: params.num_generations,
        templates: pool.members.len(),
        instances: ids,
        oracle: oracle_name.to_string(),
        series,
    };
    store.write_json(METRICS_FILE, &metrics)?;
    Ok(metrics)
}

pub fn load_metrics(store: &RunStore) -> Result<MetricsFile, StoreError> {
    if !store.has(METRICS_FILE) {
        return Err(StoreError::Missing("no metrics; run `score` first".into()));
    }
    store.read_json(METRICS_FILE)
}

fn load_anova(path: &Path) -> Result<crate::stats::AnovaResult, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    let obs: Vec<Vec<Vec<f64>>> =
        serde_json::from_str(&text).map_err(|e| StoreError::Config(format!("{}: {e}", path.display())))?;
    Ok(two_way_anova(&obs)?)
}

fn write_csvs(store: &mut RunStore, analyses: &[Analysis]) -> Result<(), StoreError> {
    store.write_file(
        "report/heatmap_abs_z.csv",
        heatmap_csv(analyses, HeatmapKind::AbsZ).as_bytes(),
    )?;
    store.write_file(
        "report/heatmap_mpi.csv",
        heatmap_csv(analyses, HeatmapKind::Mpi).as_bytes(),
    )?;
    Ok(())
}

/// Computes the statistics of a scored run, writing `analysis.json` and the
/// plot-ready CSV grids.
pub fn analyze_run(store: &mut RunStore) -> Result<Analysis, StoreError> {
    let cfg = store.config()?;
    let metrics = load_metrics(store)?;
    let anova = cfg.anova_observations.as_deref().map(load_anova).transpose()?;
    let analysis = analyze_metrics(&metrics.series, &cfg.model_families, anova)?;
    store.write_json(ANALYSIS_FILE, &analysis)?;
    write_csvs(store, std::slice::from_ref(&analysis))?;
    for iou in &analysis.iou {
        store.write_file(
            &format!("report/iou_k{}.csv", iou.k),
            iou_csv(&analysis, iou).as_bytes(),
        )?;
    }
    Ok(analysis)
}

/// Selects a diverse template subset from the scored pool.
pub fn subset_run(store: &mut RunStore, count: usize) -> Result<SubsetSelection, StoreError> {
    let pool = load_pool(store)?;
    let metrics = load_metrics(store)?;
    let table: Vec<Vec<f64>> = metrics.series.iter().map(|s| s.values.clone()).collect();
    let deltas = percentage_deltas(&table)?;
    let selected = select_diverse_subset(&pool.members, &deltas, count)?;
    let groups: Vec<usize> = pool.members.iter().map(distinct_op_kinds).collect();
    let mut csv = String::from("template,selected,op_kinds,delta_percent\n");
    for t in 0..groups.len() {
        let _ = writeln!(csv, "{t},{},{},{:.6}", selected.contains(&t), groups[t], deltas[t]);
    }
    let selection = SubsetSelection {
        schema_version: SCHEMA_VERSION,
        count,
        selected,
        deltas,
        groups,
        notes: subset_notes(),
    };
    store.write_json("report/subset.json", &selection)?;
    store.write_file("report/subset.csv", csv.as_bytes())?;
    Ok(selection)
}

/// Writes the review report in JSON and text form.
pub fn build_review(store: &mut RunStore, embedder: &dyn EmbeddingClient) -> Result<ReviewReport, StoreError> {
    let cfg = store.config()?;
    let pool = load_pool(store)?;
    let report = ReviewReport::build(&pool, embedder, &cfg.loop_config.policy)?;
    store.write_json("report/review.json", &report)?;
    store.write_file("report/review.txt", report.to_text().as_bytes())?;
    Ok(report)
}

/// Writes the summary and model-by-task grids covering this run and
/// `others` (analyses of further tasks).
pub fn write_report(store: &mut RunStore, others: &[Analysis]) -> Result<String, StoreError> {
    if !store.has(ANALYSIS_FILE) {
        return Err(StoreError::Missing("no analysis; run `analyze` first".into()));
    }
    let own: Analysis = store.read_json(ANALYSIS_FILE)?;
    let mut all = vec![own];
    all.extend(others.iter().cloned());
    write_csvs(store, &all)?;

    let mut out = String::new();
    for a in &all {
        let _ = writeln!(out, "task {} ({}, {} templates)", a.task_id, a.metric, a.templates);
        for m in &a.models {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undefined".into());
            let mut flags = Vec::new();
            if m.substantial_z {
                flags.push("|z| > 1");
            }
            if m.substantial_mpi {
                flags.push("mpi > 10%");
            }
            let _ = writeln!(
                out,
                "  {:<24} mean {:.4}  z {:>8}  mpi {:>8}  {}",
                m.model_id,
                m.mean,
                fmt(m.z),
                fmt(m.mpi),
                flags.join(", ")
            );
        }
        for g in &a.agreement {
            let label = serde_json::to_value(g.label)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            let _ = writeln!(out, "  kendall w [{}] {:.4} ({label})", g.family, g.w);
        }
        for iou in &a.iou {
            let _ = writeln!(out, "  mean top-{} iou {:.4}", iou.k, iou.mean);
        }
        if let Some(r) = a.pearson_z_mean {
            let _ = writeln!(out, "  pearson r (z vs mean) {r:.4}");
        }
        if let Some(an) = &a.anova {
            let _ = writeln!(
                out,
                "  anova F template {:.4} (p {:.4}), temperature {:.4} (p {:.4}), interaction {:.4} (p {:.4})",
                an.f_template, an.p_template, an.f_temperature, an.p_temperature, an.f_interaction, an.p_interaction
            );
        }
    }
    store.write_file("report/summary.txt", out.as_bytes())?;
    Ok(out)
}
