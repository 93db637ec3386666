use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EvalRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub num_generations: u32,
}

impl SamplingParams {
    pub fn check(&self) -> Result<(), String> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("temperature {} must be non-negative", self.temperature));
        }
        if self.max_new_tokens < 1 || self.num_generations < 1 {
            return Err("max_new_tokens and num_generations must be at least 1".into());
        }
        Ok(())
    }

    /// Number of distinct generations to request; greedy decoding yields one.
    pub fn requested_generations(&self) -> u32 {
        if self.temperature == 0.0 {
            1
        } else {
            self.num_generations
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    PassAtK { k: u32 },
    MeanPassRate,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Accuracy => f.write_str("accuracy"),
            MetricKind::PassAtK { k } => write!(f, "pass@{k}"),
            MetricKind::MeanPassRate => f.write_str("mean_pass_rate"),
        }
    }
}

/// The eight benchmark tasks with their published sampling settings and
/// metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskPreset {
    CruxevalI,
    CruxevalO,
    TestevalOverall,
    TestevalLine,
    TestevalBranch,
    TestevalPath,
    CoderujbDefect,
    CoderujbTestgen,
}

impl TaskPreset {
    pub const ALL: [TaskPreset; 8] = [
        TaskPreset::CruxevalI,
        TaskPreset::CruxevalO,
        TaskPreset::TestevalOverall,
        TaskPreset::TestevalLine,
        TaskPreset::TestevalBranch,
        TaskPreset::TestevalPath,
        TaskPreset::CoderujbDefect,
        TaskPreset::CoderujbTestgen,
    ];

    pub fn sampling(self) -> SamplingParams {
        use TaskPreset::*;
        let (temperature, max_new_tokens, num_generations) = match self {
            CruxevalI | CruxevalO => (0.8, 100, 10),
            TestevalOverall => (0.0, 256, 10),
            TestevalLine | TestevalBranch | TestevalPath => (0.0, 256, 1),
            CoderujbDefect => (0.2, 30, 1),
            CoderujbTestgen => (0.2, 512, 10),
        };
        SamplingParams {
            temperature,
            max_new_tokens,
            num_generations,
        }
    }

    pub fn metric(self) -> MetricKind {
        use TaskPreset::*;
        match self {
            CruxevalI | CruxevalO => MetricKind::PassAtK { k: 5 },
            TestevalOverall | TestevalLine | TestevalBranch | TestevalPath => MetricKind::MeanPassRate,
            CoderujbDefect => MetricKind::Accuracy,
            CoderujbTestgen => MetricKind::PassAtK { k: 1 },
        }
    }
}

/// Metric values of one model on one task, indexed by template (0 is the
/// original).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub task_id: String,
    pub model_id: String,
    pub metric: MetricKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("pass@k needs 0 <= c <= n and 1 <= k <= n (n={n}, c={c}, k={k})")]
    Domain { n: u64, c: u64, k: u64 },
    #[error("incomplete data: {} missing coordinate(s), first: {}", missing.len(), missing.first().map(String::as_str).unwrap_or("-"))]
    IncompleteData { missing: Vec<String> },
}

/// Unbiased pass@k estimate `1 - C(n-c, k) / C(n, k)`, evaluated as a running
/// product so large `n` cannot overflow.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricError> {
    if c > n || k < 1 || k > n {
        return Err(MetricError::Domain { n, c, k });
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
    let mut ratio = 1.0;
    for i in (n - c + 1)..=n {
        ratio *= 1.0 - k as f64 / i as f64;
    }
    Ok(1.0 - ratio)
}

/// Aggregates the judged records of one (task, model, template) coordinate.
/// Every instance in `instances` must have samples `0..num_generations`.
pub fn aggregate_metric(
    records: &[&EvalRecord],
    instances: &[String],
    num_generations: u32,
    metric: MetricKind,
) -> Result<f64, MetricError> {
    let mut by_instance: BTreeMap<&str, BTreeMap<u32, &EvalRecord>> = BTreeMap::new();
    for r in records {
        by_instance
            .entry(r.instance_id.as_str())
            .or_default()
            .insert(r.sample_idx, r);
    }
    let mut missing = Vec::new();
    let mut per_instance = Vec::with_capacity(instances.len());
    for inst in instances {
        let samples = by_instance.get(inst.as_str());
        let mut judged = Vec::with_capacity(num_generations as usize);
        for s in 0..num_generations {
            match samples.and_then(|m| m.get(&s)) {
                Some(r) if r.is_judged() => judged.push(*r),
                Some(r) => missing.push(format!("{}/{}/{inst}/{s} (not judged)", r.model_id, r.template_id)),
                None => missing.push(format!("instance {inst} sample {s}")),
            }
        }
        per_instance.push(judged);
    }
    if !missing.is_empty() {
        return Err(MetricError::IncompleteData { missing });
    }
    if instances.is_empty() {
        return Err(MetricError::IncompleteData {
            missing: vec!["no instances".into()],
        });
    }
    let n = num_generations as u64;
    let mut total = 0.0;
    for samples in &per_instance {
        let c = samples.iter().filter(|r| r.passed == Some(true)).count() as u64;
        total += match metric {
            MetricKind::Accuracy => c as f64 / n as f64,
            MetricKind::PassAtK { k } => pass_at_k(n, c, u64::from(k))?,
            MetricKind::MeanPassRate => samples.iter().map(|r| r.score.unwrap_or(0.0)).sum::<f64>() / n as f64,
        };
    }
    Ok(total / per_instance.len() as f64)
}

/// Builds one series per model from judged records.
pub fn compute_series(
    task_id: &str,
    records: &[EvalRecord],
    models: &[String],
    templates: usize,
    instances: &[String],
    num_generations: u32,
    metric: MetricKind,
) -> Result<Vec<MetricSeries>, MetricError> {
    let mut grouped: BTreeMap<(&str, usize), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.model_id.as_str(), r.template_id)).or_default().push(r);
    }
    let mut out = Vec::with_capacity(models.len());
    let mut missing = Vec::new();
    for model in models {
        let mut values = Vec::with_capacity(templates);
        for t in 0..templates {
            let group = grouped.get(&(model.as_str(), t)).map(Vec::as_slice).unwrap_or(&[]);
            match aggregate_metric(group, instances, num_generations, metric) {
                Ok(v) => values.push(v),
                Err(MetricError::IncompleteData { missing: m }) => {
                    missing.extend(m.into_iter().map(|c| format!("model {model} template {t}: {c}")))
                }
                Err(e) => return Err(e),
            }
        }
        out.push(MetricSeries {
            task_id: task_id.to_string(),
            model_id: model.clone(),
            metric,
            values,
        });
    }
    if !missing.is_empty() {
        return Err(MetricError::IncompleteData { missing });
    }
    Ok(out)
}
