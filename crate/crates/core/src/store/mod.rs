//! Run configuration and the on-disk run store.
//!
//! A run directory holds:
//!
//! ```text
//! runs/<run_id>/
//!   config.json      run configuration (credentials by env-var name only)
//!   pool/NNN.json    accepted meta-templates, 000 being the seed
//!   lineage.jsonl    one mutation-loop iteration per line
//!   records.jsonl    one evaluation record per line
//!   metrics.json     metric series per model
//!   analysis.json    statistics
//!   report/          CSV grids, review and summary files
//!   manifest.json    hashes and sizes of every committed file
//! ```
//!
//! JSONL logs are append-only. Each append is followed by an atomic manifest
//! update recording the committed byte count and the hash of the committed
//! prefix, so bytes past that point are an interrupted write and are
//! discarded on the next append.

mod analysis;
mod config;
mod pipeline;
mod review;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{MetricError, RunError};
use crate::mutator::{LoopError, RevalidationError};
use crate::stats::StatsError;
use crate::template::TemplateError;
use crate::util::{to_canonical_string, write_atomic};

pub use analysis::{
    analyze_metrics, heatmap_csv, iou_csv, Analysis, FamilyAgreement, HeatmapKind, ModelSensitivity, SubsetSelection,
};
pub use config::{load_instances, ClientConfig, OracleConfig, RunConfig};
pub use pipeline::{
    analyze_run, build_oracle, build_review, inference_units, init_run, load_metrics, load_pool, mutate_run,
    run_inference, score_run, subset_run, write_report, InferenceOutcome, MetricsFile, MutationSummary,
};
pub use review::{ParaphraseEntry, ReviewEntry, ReviewReport, GATE_EXEMPT};

/// Version carried by every artifact this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LINEAGE_FILE: &str = "lineage.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const ANALYSIS_FILE: &str = "analysis.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("unsupported schema version {version} in {artifact}")]
    UnsupportedVersion { artifact: String, version: u64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Revalidation(#[from] RevalidationError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("embedding client failed: {0}")]
    Embedding(String),
}

impl StoreError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io { .. } => "io",
            StoreError::Corrupt(_) => "corrupt_store",
            StoreError::UnsupportedVersion { .. } => "unsupported_version",
            StoreError::Config(_) => "config",
            StoreError::Missing(_) => "missing_prerequisite",
            StoreError::Template(TemplateError::Schema(_)) => "schema_error",
            StoreError::Template(_) => "invariant_error",
            StoreError::Loop(LoopError::BudgetExhausted { .. }) => "budget_exhausted",
            StoreError::Loop(LoopError::Client(_)) => "transport",
            StoreError::Loop(LoopError::Embedding(_)) => "transport",
            StoreError::Loop(_) => "loop_config",
            StoreError::Revalidation(_) => "revalidation",
            StoreError::Run(_) => "run",
            StoreError::Metric(MetricError::IncompleteData { .. }) => "incomplete_data",
            StoreError::Metric(_) => "metric",
            StoreError::Stats(_) => "stats",
            StoreError::Embedding(_) => "transport",
        }
    }

    /// True for budget and transport failures, as opposed to invalid input.
    pub fn is_runtime_failure(&self) -> bool {
        matches!(self.code(), "budget_exhausted" | "transport" | "io")
    }
}

pub(crate) fn check_version(raw: &serde_json::Value, artifact: &str) -> Result<(), StoreError> {
    match raw.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == SCHEMA_VERSION as u64 => Ok(()),
        Some(v) => Err(StoreError::UnsupportedVersion {
            artifact: artifact.into(),
            version: v,
        }),
        None => Err(StoreError::Config(format!("{artifact}: missing schema_version"))),
    }
}

/// Hash and size of a committed file. For JSONL logs these describe the
/// committed prefix and `lines` counts its data lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_id: String,
    pub rng_seed: u64,
    pub config_sha256: String,
    /// Descriptions of the clients used per stage.
    #[serde(default)]
    pub clients: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<MutationSummary>,
    /// Number of records a complete inference stage produces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_records: Option<u64>,
    #[serde(default)]
    pub inference_complete: bool,
    pub files: BTreeMap<String, FileEntry>,
}

/// An open run directory.
pub struct RunStore {
    dir: PathBuf,
    manifest: Manifest,
    hashers: BTreeMap<String, Sha256>,
}

fn log_header(name: &str) -> String {
    let artifact = name.trim_end_matches(".jsonl");
    format!("{{\"artifact\":\"{artifact}\",\"schema_version\":{SCHEMA_VERSION}}}\n")
}

impl RunStore {
    /// Creates a run directory holding `config`.
    pub fn create(dir: &Path, run_id: &str, config: &RunConfig) -> Result<Self, StoreError> {
        if dir.join(MANIFEST_FILE).exists() {
            return Err(StoreError::Config(format!(
                "run directory {} already exists",
                dir.display()
            )));
        }
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        let config_text = to_canonical_string(config).map_err(|e| StoreError::Config(e.to_string()))?;
        let mut store = RunStore {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                schema_version: SCHEMA_VERSION,
                run_id: run_id.to_string(),
                rng_seed: config.rng_seed,
                config_sha256: crate::util::sha256_hex(config_text.as_bytes()),
                clients: BTreeMap::new(),
                mutation: None,
                expected_records: None,
                inference_complete: false,
                files: BTreeMap::new(),
            },
            hashers: BTreeMap::new(),
        };
        store.write_file(CONFIG_FILE, config_text.as_bytes())?;
        Ok(store)
    }

    /// Opens a run directory, verifying every committed file against the
    /// manifest.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| StoreError::Corrupt(format!("manifest: {e}")))?;
        check_version(&raw, "manifest")?;
        let manifest: Manifest =
            serde_json::from_value(raw).map_err(|e| StoreError::Corrupt(format!("manifest: {e}")))?;
        let mut hashers = BTreeMap::new();
        for (name, entry) in &manifest.files {
            let file = dir.join(name);
            let bytes = fs::read(&file).map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => StoreError::Corrupt(format!("{name} is missing")),
                _ => StoreError::io(&file, e),
            })?;
            let committed = entry.bytes as usize;
            if bytes.len() < committed {
                return Err(StoreError::Corrupt(format!(
                    "{name} holds {} bytes but {committed} were committed",
                    bytes.len()
                )));
            }
            let is_log = entry.lines.is_some();
            if !is_log && bytes.len() != committed {
                return Err(StoreError::Corrupt(format!(
                    "{name} changed size since it was committed"
                )));
            }
            let mut hasher = Sha256::new();
            hasher.update(&bytes[..committed]);
            let digest = hex::encode(hasher.clone().finalize());
            if digest != entry.sha256 {
                return Err(StoreError::Corrupt(format!("{name} does not match its manifest hash")));
            }
            if is_log {
                hashers.insert(name.clone(), hasher);
            }
        }
        Ok(RunStore {
            dir: dir.to_path_buf(),
            manifest,
            hashers,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.files.contains_key(name)
    }

    /// The stored configuration, with paths resolved as they were at
    /// creation.
    pub fn config(&self) -> Result<RunConfig, StoreError> {
        let text = self.read_committed(CONFIG_FILE)?;
        RunConfig::parse(&String::from_utf8_lossy(&text))
    }

    fn save_manifest(&self) -> Result<(), StoreError> {
        let text = to_canonical_string(&self.manifest).map_err(|e| StoreError::Config(e.to_string()))?;
        let path = self.path(MANIFEST_FILE);
        write_atomic(&path, text.as_bytes()).map_err(|e| StoreError::io(&path, e))
    }

    pub(crate) fn update_manifest(&mut self, f: impl FnOnce(&mut Manifest)) -> Result<(), StoreError> {
        f(&mut self.manifest);
        self.save_manifest()
    }

    /// Atomically writes a whole file and commits it.
    pub fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.path(name);
        write_atomic(&path, bytes).map_err(|e| StoreError::io(&path, e))?;
        self.hashers.remove(name);
        self.manifest.files.insert(
            name.to_string(),
            FileEntry {
                sha256: crate::util::sha256_hex(bytes),
                bytes: bytes.len() as u64,
                lines: None,
            },
        );
        self.save_manifest()
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), StoreError> {
        let text = to_canonical_string(value).map_err(|e| StoreError::Config(e.to_string()))?;
        self.write_file(name, text.as_bytes())
    }

    /// Committed bytes of a file.
    pub fn read_committed(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        let entry = self
            .manifest
            .files
            .get(name)
            .ok_or_else(|| StoreError::Missing(format!("{name} has not been written")))?;
        let path = self.path(name);
        let mut bytes = fs::read(&path).map_err(|e| StoreError::io(&path, e))?;
        if bytes.len() < entry.bytes as usize {
            return Err(StoreError::Corrupt(format!(
                "{name} is shorter than its committed size"
            )));
        }
        bytes.truncate(entry.bytes as usize);
        if crate::util::sha256_hex(&bytes) != entry.sha256 {
            return Err(StoreError::Corrupt(format!("{name} does not match its manifest hash")));
        }
        Ok(bytes)
    }

    /// Reads a JSON artifact, rejecting unknown schema versions.
    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, StoreError> {
        let bytes = self.read_committed(name)?;
        let raw: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(format!("{name}: {e}")))?;
        check_version(&raw, name)?;
        serde_json::from_value(raw).map_err(|e| StoreError::Corrupt(format!("{name}: {e}")))
    }

    /// Appends lines to a JSONL log and commits them. Bytes beyond the
    /// committed size, left by an interrupted append, are dropped first.
    pub fn append_lines(&mut self, name: &str, lines: &[String]) -> Result<(), StoreError> {
        if !self.manifest.files.contains_key(name) {
            self.rewrite_log(name, &[])?;
        }
        let entry = self.manifest.files.get(name).cloned().expect("log entry exists");
        if entry.lines.is_none() {
            return Err(StoreError::Corrupt(format!("{name} is not a log file")));
        }
        let path = self.path(name);
        let mut buf = String::new();
        for line in lines {
            debug_assert!(!line.contains('\n'));
            buf.push_str(line);
            buf.push('\n');
        }
        {
            let mut f = OpenOptions::new()
                .write(true)
                .open(&path)
                .map_err(|e| StoreError::io(&path, e))?;
            f.set_len(entry.bytes).map_err(|e| StoreError::io(&path, e))?;
            use std::io::Seek;
            f.seek(io::SeekFrom::End(0)).map_err(|e| StoreError::io(&path, e))?;
            f.write_all(buf.as_bytes()).map_err(|e| StoreError::io(&path, e))?;
            f.sync_data().map_err(|e| StoreError::io(&path, e))?;
        }
        let hasher = self.hashers.entry(name.to_string()).or_default();
        hasher.update(buf.as_bytes());
        let digest = hex::encode(hasher.clone().finalize());
        self.manifest.files.insert(
            name.to_string(),
            FileEntry {
                sha256: digest,
                bytes: entry.bytes + buf.len() as u64,
                lines: Some(entry.lines.unwrap_or(0) + lines.len() as u64),
            },
        );
        self.save_manifest()
    }

    pub fn append_json<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<(), StoreError> {
        let lines = items
            .iter()
            .map(|i| serde_json::to_string(i).map_err(|e| StoreError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        self.append_lines(name, &lines)
    }

    /// Replaces a JSONL log atomically.
    pub fn rewrite_log(&mut self, name: &str, lines: &[String]) -> Result<(), StoreError> {
        let mut text = log_header(name);
        for line in lines {
            text.push_str(line);
            text.push('\n');
        }
        let path = self.path(name);
        write_atomic(&path, text.as_bytes()).map_err(|e| StoreError::io(&path, e))?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        self.manifest.files.insert(
            name.to_string(),
            FileEntry {
                sha256: hex::encode(hasher.clone().finalize()),
                bytes: text.len() as u64,
                lines: Some(lines.len() as u64),
            },
        );
        self.hashers.insert(name.to_string(), hasher);
        self.save_manifest()
    }

    /// Committed data lines of a log, header checked and removed.
    pub fn read_log(&self, name: &str) -> Result<Vec<String>, StoreError> {
        let bytes = self.read_committed(name)?;
        let text = String::from_utf8(bytes).map_err(|e| StoreError::Corrupt(format!("{name}: {e}")))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| StoreError::Corrupt(format!("{name} has no header")))?;
        let raw: serde_json::Value =
            serde_json::from_str(header).map_err(|e| StoreError::Corrupt(format!("{name} header: {e}")))?;
        check_version(&raw, name)?;
        Ok(lines.map(str::to_string).collect())
    }

    pub fn read_log_json<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, StoreError> {
        self.read_log(name)?
            .iter()
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| StoreError::Corrupt(format!("{name} line {}: {e}", i + 2)))
            })
            .collect()
    }
}
