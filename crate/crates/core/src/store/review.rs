use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use similar::TextDiff;

use super::{StoreError, SCHEMA_VERSION};
use crate::mutator::Pool;
use crate::ops::{apply_operation, value_literal};
use crate::validation::{cosine_similarity, EmbeddingClient, ValidationPolicy};

/// Marker for paraphrases whose original text is short enough to skip the
/// similarity check.
pub const GATE_EXEMPT: &str = "gate-exempt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseEntry {
    /// Position in the member's lineage.
    pub step: usize,
    pub operation: String,
    pub node: String,
    pub old: String,
    pub new: String,
    pub words: usize,
    /// Cosine similarity, or `None` when gate-exempt.
    pub similarity: Option<f64>,
    /// `"computed"` or [`GATE_EXEMPT`].
    pub semantic_check: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub member: usize,
    pub lineage: Vec<String>,
    pub paraphrases: Vec<ParaphraseEntry>,
    /// Unified diff of the rendering against the original template.
    pub diff: String,
}

/// Material for manually checking that paraphrases keep their meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub schema_version: u32,
    pub task_id: String,
    pub word_count_gate: usize,
    pub templates: Vec<ReviewEntry>,
}

impl ReviewReport {
    /// Replays every member's lineage from the seed, recording each
    /// paraphrase with its before and after text.
    pub fn build(pool: &Pool, embedder: &dyn EmbeddingClient, policy: &ValidationPolicy) -> Result<Self, StoreError> {
        let seed = pool.seed().without_lineage();
        let original = seed.render();
        let mut templates = Vec::with_capacity(pool.members.len());
        for (member, mt) in pool.members.iter().enumerate() {
            let mut replay = seed.clone();
            let mut paraphrases = Vec::new();
            for (step, call) in mt.lineage.iter().enumerate() {
                let spec = replay.op(&call.name).ok_or_else(|| {
                    StoreError::Corrupt(format!("member {member}: unknown operation `{}`", call.name))
                })?;
                if spec.kind.is_paraphrase() {
                    let old = replay
                        .tree
                        .node(&spec.target)
                        .map(|n| n.content.clone())
                        .unwrap_or_default();
                    let new = value_literal(spec, call)
                        .ok()
                        .and_then(|l| l.as_text())
                        .unwrap_or_default()
                        .to_string();
                    let words = old.split_whitespace().count();
                    let similarity = if words > policy.word_count_gate {
                        let u = embedder.embed(&old).map_err(|e| StoreError::Embedding(e.to_string()))?;
                        let v = embedder.embed(&new).map_err(|e| StoreError::Embedding(e.to_string()))?;
                        Some(cosine_similarity(&u, &v).unwrap_or(0.0))
                    } else {
                        None
                    };
                    paraphrases.push(ParaphraseEntry {
                        step,
                        operation: call.to_string(),
                        node: spec.target.clone(),
                        old,
                        new,
                        words,
                        semantic_check: if similarity.is_some() { "computed" } else { GATE_EXEMPT }.into(),
                        similarity,
                    });
                }
                replay = apply_operation(&replay, call)
                    .map_err(|e| StoreError::Corrupt(format!("member {member} step {step}: {e}")))?;
            }
            let rendered = mt.render();
            let diff = TextDiff::from_lines(&original, &rendered)
                .unified_diff()
                .header("original", &format!("template {member}"))
                .to_string();
            templates.push(ReviewEntry {
                member,
                lineage: mt.lineage.iter().map(ToString::to_string).collect(),
                paraphrases,
                diff,
            });
        }
        Ok(ReviewReport {
            schema_version: SCHEMA_VERSION,
            task_id: seed.task_id.clone(),
            word_count_gate: policy.word_count_gate,
            templates,
        })
    }

    /// Plain-text form for reading.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Review of {} templates for task {}",
            self.templates.len(),
            self.task_id
        );
        for t in &self.templates {
            let _ = writeln!(out, "\n=== template {} ===", t.member);
            if t.lineage.is_empty() {
                let _ = writeln!(out, "original template");
                continue;
            }
            for (i, call) in t.lineage.iter().enumerate() {
                let _ = writeln!(out, "  {}. {call}", i + 1);
            }
            for p in &t.paraphrases {
                let score = match p.similarity {
                    Some(s) => format!("similarity {s:.4}"),
                    None => GATE_EXEMPT.to_string(),
                };
                let _ = writeln!(out, "  paraphrase of `{}` at step {} ({score}):", p.node, p.step + 1);
                let _ = writeln!(out, "    old: {:?}", p.old);
                let _ = writeln!(out, "    new: {:?}", p.new);
            }
            out.push_str(&t.diff);
        }
        out
    }
}
