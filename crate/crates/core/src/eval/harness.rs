use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::oracle::{JudgeInput, Oracle};
use super::postprocess::{postprocess, Adapter};
use super::{EvalRecord, SamplingParams};
use crate::mutator::ClientError;
use crate::template::{instantiate_prompt, TaskInstance, TemplateError};

/// One inference call: a filled prompt and how many samples to draw.
#[derive(Debug, Clone, Serialize)]
pub struct InferenceRequest<'a> {
    pub model_id: &'a str,
    pub template_id: usize,
    pub instance_id: &'a str,
    pub prompt: &'a str,
    pub params: &'a SamplingParams,
    pub n: u32,
}

pub trait InferenceClient: Send + Sync {
    /// Returns up to `req.n` generations.
    fn generate(&self, req: &InferenceRequest<'_>) -> Result<Vec<String>, ClientError>;
}

/// Canned responses keyed by (model, template, instance); an entry without
/// a model applies to every model. Sample `i` gets response `i mod len`.
#[derive(Debug, Clone, Default)]
pub struct CannedInference {
    responses: HashMap<(Option<String>, usize, String), Vec<String>>,
}

#[derive(Deserialize)]
struct CannedLine {
    #[serde(default)]
    model_id: Option<String>,
    template_id: usize,
    instance_id: String,
    #[serde(default)]
    responses: Vec<String>,
    #[serde(default)]
    response: Option<String>,
}

impl CannedInference {
    pub fn insert(&mut self, model_id: Option<&str>, template_id: usize, instance_id: &str, responses: Vec<String>) {
        self.responses.insert(
            (model_id.map(str::to_string), template_id, instance_id.to_string()),
            responses,
        );
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, String> {
        let mut out = CannedInference::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut l: CannedLine =
                serde_json::from_str(line).map_err(|e| format!("inference transcript line {}: {e}", i + 1))?;
            l.responses.extend(l.response.take());
            out.insert(l.model_id.as_deref(), l.template_id, &l.instance_id, l.responses);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse_jsonl(&text)
    }
}

impl InferenceClient for CannedInference {
    fn generate(&self, req: &InferenceRequest<'_>) -> Result<Vec<String>, ClientError> {
        let key = |m: Option<String>| (m, req.template_id, req.instance_id.to_string());
        let canned = self
            .responses
            .get(&key(Some(req.model_id.to_string())))
            .or_else(|| self.responses.get(&key(None)))
            .filter(|r| !r.is_empty())
            .ok_or_else(|| {
                ClientError::Config(format!(
                    "no canned response for {}/{}/{}",
                    req.model_id, req.template_id, req.instance_id
                ))
            })?;
        Ok((0..req.n as usize).map(|i| canned[i % canned.len()].clone()).collect())
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("template {template} cannot be filled for instance {instance}: {source}")]
    Fill {
        template: usize,
        instance: String,
        source: TemplateError,
    },
    #[error("invalid sampling parameters: {0}")]
    Params(String),
    #[error("no task instances")]
    NoInstances,
    #[error("record sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

/// What to run for one model.
pub struct TaskRun<'a> {
    pub task_id: &'a str,
    pub model_id: &'a str,
    /// Rendered templates, indexed by template id.
    pub templates: &'a [String],
    pub instances: &'a [TaskInstance],
    pub params: SamplingParams,
    pub concurrency: usize,
    /// Extra attempts after a retryable client failure.
    pub retries: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub requests: usize,
    pub records: usize,
    pub failed_generations: usize,
    pub skipped_units: usize,
}

/// Fills every template with every instance and queries the client, handing
/// each (template, instance) unit's records to `sink` on the calling thread.
/// Units listed in `done` are skipped. Transport failures become failed
/// records rather than errors.
pub fn run_task(
    run: &TaskRun<'_>,
    client: &dyn InferenceClient,
    done: &HashSet<(usize, String)>,
    sink: &mut dyn FnMut(Vec<EvalRecord>) -> std::io::Result<()>,
) -> Result<RunSummary, RunError> {
    run.params.check().map_err(RunError::Params)?;
    if run.instances.is_empty() {
        return Err(RunError::NoInstances);
    }
    let mut units = Vec::new();
    let mut summary = RunSummary::default();
    for (t, template) in run.templates.iter().enumerate() {
        for inst in run.instances {
            if done.contains(&(t, inst.instance_id.clone())) {
                summary.skipped_units += 1;
                continue;
            }
            let prompt = instantiate_prompt(template, inst).map_err(|source| RunError::Fill {
                template: t,
                instance: inst.instance_id.clone(),
                source,
            })?;
            units.push((t, inst, prompt));
        }
    }

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = run.concurrency.clamp(1, units.len().max(1));
    let (tx, rx) = mpsc::channel::<Vec<EvalRecord>>();
    let mut sink_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (units, next, abort) = (&units, &next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((t, inst, prompt)) = units.get(i) else { break };
                if tx.send(run_unit(run, client, *t, inst, prompt)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for records in rx {
            summary.requests += 1;
            summary.records += records.len();
            summary.failed_generations += records.iter().filter(|r| r.error.is_some()).count();
            if sink_error.is_none() {
                if let Err(e) = sink(records) {
                    sink_error = Some(e);
                    abort.store(true, Ordering::Relaxed);
                }
            }
        }
    });
    match sink_error {
        Some(e) => Err(RunError::Sink(e)),
        None => Ok(summary),
    }
}

fn run_unit(
    run: &TaskRun<'_>,
    client: &dyn InferenceClient,
    t: usize,
    inst: &TaskInstance,
    prompt: &str,
) -> Vec<EvalRecord> {
    let req = InferenceRequest {
        model_id: run.model_id,
        template_id: t,
        instance_id: &inst.instance_id,
        prompt,
        params: &run.params,
        n: run.params.requested_generations(),
    };
    let mut attempt = 0;
    let result = loop {
        match client.generate(&req) {
            Err(e) if e.is_retryable() && attempt < run.retries => attempt += 1,
            other => break other,
        }
    };
    let n = run.params.num_generations as usize;
    let (texts, error): (Vec<String>, Option<String>) = match result {
        Ok(mut texts) => {
            if req.n == 1 && !texts.is_empty() {
                texts.truncate(1);
                texts = vec![texts[0].clone(); n];
            }
            (texts, None)
        }
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    (0..n)
        .map(|s| {
            let (raw, err) = match texts.get(s) {
                Some(text) => (text.clone(), None),
                None => (
                    String::new(),
                    Some(
                        error
                            .clone()
                            .unwrap_or_else(|| "client returned too few generations".into()),
                    ),
                ),
            };
            EvalRecord {
                model_id: run.model_id.to_string(),
                task_id: run.task_id.to_string(),
                template_id: t,
                instance_id: inst.instance_id.clone(),
                sample_idx: s as u32,
                raw_response: raw,
                error: err,
                extracted: None,
                passed: None,
                score: None,
                judge_meta: serde_json::Value::Null,
            }
        })
        .collect()
}

/// Post-processes and judges every record in parallel. Failed generations,
/// extraction misses and oracle errors are judged as not passed, with the
/// cause kept in `judge_meta`.
pub fn judge_records(
    records: &mut [EvalRecord],
    adapters: &[Adapter],
    instances: &[TaskInstance],
    oracle: &dyn Oracle,
) {
    let payloads: HashMap<&str, &serde_json::Value> = instances
        .iter()
        .map(|i| (i.instance_id.as_str(), &i.judge_payload))
        .collect();
    let null = serde_json::Value::Null;
    records.par_iter_mut().for_each(|r| {
        r.extracted = None;
        let fail = |r: &mut EvalRecord, meta: serde_json::Value| {
            r.passed = Some(false);
            r.score = Some(0.0);
            r.judge_meta = meta;
        };
        if let Some(e) = r.error.clone() {
            return fail(r, json!({ "failed_generation": e }));
        }
        let adapter = adapters.get(r.template_id).cloned().unwrap_or_default();
        let extracted = match postprocess(&r.raw_response, &adapter) {
            Ok(x) => x,
            Err(e) => return fail(r, json!({ "extraction_miss": e.to_string() })),
        };
        let coord = r.coordinate();
        let payload = payloads.get(r.instance_id.as_str()).copied().unwrap_or(&null);
        let verdict = oracle.judge(&JudgeInput {
            coord: &coord,
            extracted: &extracted,
            payload,
        });
        r.extracted = Some(extracted);
        match verdict {
            Ok(j) => {
                r.passed = Some(j.passed);
                r.score = Some(j.score.clamp(0.0, 1.0));
                r.judge_meta = j.meta;
            }
            Err(e) => fail(r, json!({ "oracle_error": e.to_string() })),
        }
    });
}
