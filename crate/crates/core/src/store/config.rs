use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{StoreError, SCHEMA_VERSION};
use crate::eval::{AdapterConfig, MetricKind, SamplingParams, TaskPreset};
use crate::mutator::LoopConfig;

/// An OpenAI-compatible endpoint. The credential is named by environment
/// variable and read at call time; it never appears in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_timeout_s() -> u64 {
    120
}

fn default_retries() -> u32 {
    3
}

impl ClientConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    #[default]
    Exact,
    Normalized {
        #[serde(default = "yes")]
        case_insensitive: bool,
    },
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_command_timeout")]
        timeout_s: u64,
    },
    Replay {
        transcript: PathBuf,
    },
}

fn yes() -> bool {
    true
}

fn default_command_timeout() -> u64 {
    30
}

impl OracleConfig {
    pub fn name(&self) -> &'static str {
        match self {
            OracleConfig::Exact => "exact",
            OracleConfig::Normalized { .. } => "normalized",
            OracleConfig::Command { .. } => "command",
            OracleConfig::Replay { .. } => "replay",
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub task_id: String,
    pub meta_template: PathBuf,
    /// JSONL file of task instances.
    pub instances: PathBuf,
    pub threshold: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<TaskPreset>,
    /// Overrides the preset's sampling parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingParams>,
    /// Overrides the preset's metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricKind>,
    pub models: Vec<String>,
    /// Named model groups for per-family agreement.
    #[serde(default)]
    pub model_families: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutator: Option<ClientConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<ClientConfig>,
    /// Inference endpoints; each model id is sent as the request's model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<ClientConfig>,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub adapter: AdapterConfig,
    #[serde(default, rename = "loop")]
    pub loop_config: LoopConfig,
    #[serde(default = "default_retries")]
    pub inference_retries: u32,
    #[serde(default)]
    pub tie_correction: bool,
    /// Optional `obs[template][temperature][replicate]` JSON for ANOVA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anova_observations: Option<PathBuf>,
}

fn default_concurrency() -> usize {
    4
}

impl RunConfig {
    /// A minimal configuration with defaults everywhere else.
    pub fn new(
        task_id: &str,
        meta_template: PathBuf,
        instances: PathBuf,
        models: Vec<String>,
        threshold: usize,
    ) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            task_id: task_id.to_string(),
            meta_template,
            instances,
            threshold,
            rng_seed: 0,
            concurrency: default_concurrency(),
            preset: None,
            sampling: None,
            metric: None,
            models,
            model_families: BTreeMap::new(),
            mutator: None,
            embedding: None,
            inference: None,
            oracle: OracleConfig::Exact,
            adapter: AdapterConfig::default(),
            loop_config: LoopConfig::default(),
            inference_retries: default_retries(),
            tie_correction: false,
            anova_observations: None,
        }
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| StoreError::Config(e.to_string()))?;
        super::check_version(&raw, "config")?;
        serde_json::from_value(raw).map_err(|e| StoreError::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.meta_template);
        fix(&mut self.instances);
        if let Some(p) = self.anova_observations.as_mut() {
            fix(p);
        }
        if let OracleConfig::Replay { transcript } = &mut self.oracle {
            fix(transcript);
        }
    }

    pub fn sampling_params(&self) -> Result<SamplingParams, StoreError> {
        self.sampling
            .or_else(|| self.preset.map(TaskPreset::sampling))
            .ok_or_else(|| StoreError::Config("no sampling parameters: set `sampling` or `preset`".into()))
    }

    pub fn metric_kind(&self) -> Result<MetricKind, StoreError> {
        self.metric
            .or_else(|| self.preset.map(TaskPreset::metric))
            .ok_or_else(|| StoreError::Config("no metric: set `metric` or `preset`".into()))
    }

    /// Checks invariants: supported version, threshold, referenced paths,
    /// model list and parameters.
    pub fn check(&self) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return Err(StoreError::UnsupportedVersion {
                artifact: "config".into(),
                version: self.schema_version as u64,
            });
        }
        if self.threshold < 1 {
            return bad("threshold must be at least 1".into());
        }
        if self.concurrency < 1 {
            return bad("concurrency must be at least 1".into());
        }
        for p in [&self.meta_template, &self.instances]
            .into_iter()
            .chain(self.anova_observations.as_ref())
        {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if let OracleConfig::Replay { transcript } = &self.oracle {
            if !transcript.exists() {
                return bad(format!("{} does not exist", transcript.display()));
            }
        }
        if self.models.is_empty() {
            return bad("no models configured".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.models {
            if !seen.insert(m) {
                return bad(format!("model `{m}` listed twice"));
            }
        }
        for (family, members) in &self.model_families {
            if let Some(m) = members.iter().find(|m| !self.models.contains(m)) {
                return bad(format!("family `{family}` names unknown model `{m}`"));
            }
        }
        self.loop_config.budget.check().map_err(StoreError::Config)?;
        self.loop_config.policy.check().map_err(StoreError::Config)?;
        self.sampling_params()?.check().map_err(StoreError::Config)?;
        self.metric_kind()?;
        Ok(())
    }
}

/// Reads task instances from JSONL.
pub fn load_instances(path: &Path) -> Result<Vec<crate::template::TaskInstance>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    let mut out = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let inst: crate::template::TaskInstance = serde_json::from_str(line)
            .map_err(|e| StoreError::Config(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if !ids.insert(inst.instance_id.clone()) {
            return Err(StoreError::Config(format!(
                "duplicate instance id `{}`",
                inst.instance_id
            )));
        }
        out.push(inst);
    }
    if out.is_empty() {
        return Err(StoreError::Config(format!("{} holds no instances", path.display())));
    }
    Ok(out)
}
