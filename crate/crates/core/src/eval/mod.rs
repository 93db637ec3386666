//! Inference and evaluation of template pools.
//!
//! Every pool template is filled with every task instance and sent to the
//! evaluated model; responses are post-processed, judged by an oracle and
//! aggregated into one metric value per template.

mod harness;
mod metric;
mod oracle;
mod postprocess;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use harness::{
    judge_records, run_task, CannedInference, InferenceClient, InferenceRequest, RunError, RunSummary, TaskRun,
};
pub use metric::{
    aggregate_metric, compute_series, pass_at_k, MetricError, MetricKind, MetricSeries, SamplingParams, TaskPreset,
};
pub use oracle::{
    CommandOracle, ExactOracle, JudgeInput, Judgement, NormalizedOracle, Oracle, OracleError, ReplayOracle,
};
pub use postprocess::{postprocess, Adapter, AdapterConfig, ExtractionMiss};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coordinate {
    pub model_id: String,
    pub template_id: usize,
    pub instance_id: String,
    pub sample_idx: u32,
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.model_id, self.template_id, self.instance_id, self.sample_idx
        )
    }
}

/// One generation and, once judged, its verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model_id: String,
    pub task_id: String,
    pub template_id: usize,
    pub instance_id: String,
    pub sample_idx: u32,
    pub raw_response: String,
    /// Set when the generation failed after retries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub judge_meta: serde_json::Value,
}

impl EvalRecord {
    pub fn coordinate(&self) -> Coordinate {
        Coordinate {
            model_id: self.model_id.clone(),
            template_id: self.template_id,
            instance_id: self.instance_id.clone(),
            sample_idx: self.sample_idx,
        }
    }

    pub fn is_judged(&self) -> bool {
        self.passed.is_some()
    }
}

/// Sorts records by (model, template, instance, sample).
pub fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| {
        (&a.model_id, a.template_id, &a.instance_id, a.sample_idx).cmp(&(
            &b.model_id,
            b.template_id,
            &b.instance_id,
            b.sample_idx,
        ))
    });
}

#[cfg(test)]
mod tests;
