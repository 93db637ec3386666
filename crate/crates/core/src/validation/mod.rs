//! Rejection conditions for generated operation calls.
//!
//! * C1: the call does not match the operation signature.
//! * C2: a paraphrase of a long text node drifts semantically (embedding
//!   cosine similarity below the threshold).
//! * C3: the call breaks a rule stated in the operation description.
//!
//! Checks run in the order C1, C3, C2 and stop at the first rejection, so
//! embeddings are only requested for calls that are otherwise valid.

mod embed;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ops::{value_literal, CaseStyle, Literal, OpCall};
use crate::template::{
    check_format_pattern, check_tag_content, slot_markers, ArgRole, ArgType, MetaTemplate, OpKind, OpSpec, SharedFormat,
};

pub use embed::{cosine_similarity, EmbedError, EmbeddingClient, SimilarityError, StubEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    C1,
    C2,
    C3,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    pub detail: String,
    /// Cosine similarity, when C2 was evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

impl Verdict {
    pub fn accept(detail: impl Into<String>) -> Self {
        Verdict {
            accepted: true,
            condition: None,
            detail: detail.into(),
            similarity: None,
        }
    }

    pub fn reject(condition: Condition, detail: impl Into<String>) -> Self {
        Verdict {
            accepted: false,
            condition: Some(condition),
            detail: detail.into(),
            similarity: None,
        }
    }

    fn with_similarity(mut self, s: f64) -> Self {
        self.similarity = Some(s);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationPolicy {
    pub similarity_threshold: f64,
    /// Texts with at most this many words skip the semantic check.
    pub word_count_gate: usize,
    pub delimiter_max_len: usize,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy {
            similarity_threshold: 0.85,
            word_count_gate: 10,
            delimiter_max_len: 16,
        }
    }
}

impl ValidationPolicy {
    pub fn check(&self) -> Result<(), String> {
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(format!(
                "similarity_threshold {} is outside (0, 1]",
                self.similarity_threshold
            ));
        }
        if self.word_count_gate < 1 {
            return Err("word_count_gate must be at least 1".into());
        }
        if self.delimiter_max_len < 1 {
            return Err("delimiter_max_len must be at least 1".into());
        }
        Ok(())
    }
}

/// C1: argument count, types, enum membership and declared bounds.
pub fn check_arguments(call: &OpCall, spec: &OpSpec) -> Verdict {
    if call.name != spec.name {
        return Verdict::reject(Condition::C1, format!("`{}` is not `{}`", call.name, spec.name));
    }
    if call.args.len() != spec.args.len() {
        return Verdict::reject(
            Condition::C1,
            format!("expected {} argument(s), got {}", spec.args.len(), call.args.len()),
        );
    }
    for (lit, arg) in call.args.iter().zip(&spec.args) {
        let problem = match (arg.ty, lit) {
            (ArgType::String, Literal::Str(s)) => match arg.max_len {
                Some(max) if s.chars().count() > max => Some(format!("longer than {max} characters")),
                _ => None,
            },
            (ArgType::Enum, Literal::Str(s) | Literal::Ident(s)) => {
                (!arg.values.contains(s)).then(|| format!("{s:?} is not one of {:?}", arg.values))
            }
            (ArgType::Integer, Literal::Int(n)) => {
                if arg.min.is_some_and(|m| *n < m) || arg.max.is_some_and(|m| *n > m) {
                    Some(format!("{n} is out of range"))
                } else {
                    None
                }
            }
            (ty, _) => Some(format!("expected {}", type_name(ty))),
        };
        if let Some(p) = problem {
            return Verdict::reject(Condition::C1, format!("argument `{}`: {p}", arg.name));
        }
    }
    Verdict::accept("signature matches")
}

fn type_name(ty: ArgType) -> &'static str {
    match ty {
        ArgType::String => "a string",
        ArgType::Integer => "an integer",
        ArgType::Enum => "an enum member",
    }
}

fn slot_counts(s: &str) -> Option<BTreeMap<String, usize>> {
    let mut counts = BTreeMap::new();
    for m in slot_markers(s).ok()? {
        *counts.entry(m).or_insert(0) += 1;
    }
    Some(counts)
}

fn delimiter_char_allowed(c: char) -> bool {
    c.is_whitespace() || (c.is_ascii_punctuation() && c != '{' && c != '}')
}

fn format_part_ok(p: &str) -> Result<(), String> {
    check_format_pattern(p)?;
    if p.replacen("{}", "", 1).trim().is_empty() {
        return Err(format!("format {p:?} has no decoration around the tag"));
    }
    Ok(())
}

/// C3: rule-based reading of the operation description.
pub fn check_description(call: &OpCall, spec: &OpSpec, mt: &MetaTemplate, policy: &ValidationPolicy) -> Verdict {
    let reject = |m: String| Verdict::reject(Condition::C3, m);
    let tree = &mt.tree;
    let current = if spec.targets_format() {
        tree.format().notation()
    } else {
        match tree.node(&spec.target) {
            Some(n) => n.content.clone(),
            None => return reject(format!("target node `{}` does not exist", spec.target)),
        }
    };
    for (lit, arg) in call.args.iter().zip(&spec.args) {
        if arg.role == ArgRole::Target && lit.as_text() != Some(current.as_str()) {
            return reject(format!(
                "argument `{}` must be the current content {current:?}",
                arg.name
            ));
        }
    }
    let value = match value_literal(spec, call).ok().and_then(Literal::as_text) {
        Some(v) => v,
        None => return reject("missing value argument".into()),
    };
    match spec.kind {
        OpKind::ParaphraseText => {
            if value.trim().is_empty() {
                return reject("new text is empty".into());
            }
            if value == current {
                return reject("new text equals the current text".into());
            }
            match (slot_counts(&current), slot_counts(value)) {
                (Some(a), Some(b)) if a == b => {}
                _ => return reject("paraphrase must keep every {{slot}} marker exactly once as before".into()),
            }
            let node = tree.node(&spec.target).expect("checked above");
            for m in &node.mentions {
                let now = tree.mention_form(&m.node, m.form);
                if !value.contains(&m.literal) && !now.as_ref().is_some_and(|f| value.contains(f.as_str())) {
                    return reject(format!("paraphrase drops the reference {:?}", m.literal));
                }
            }
        }
        OpKind::ParaphraseTag => {
            if let Err(e) = check_tag_content(value) {
                return reject(e);
            }
            if value == current {
                return reject("new tag equals the current tag".into());
            }
            let clash = tree
                .sections()
                .any(|s| s.tag != spec.target && tree.node(&s.tag).is_some_and(|n| n.content == value));
            if clash {
                return reject(format!("another section already uses the tag {value:?}"));
            }
        }
        OpKind::ChangeTagCase => {
            let Ok(style) = value.parse::<CaseStyle>() else {
                return reject(format!("unknown case style {value:?}"));
            };
            if style.apply(&current) == current {
                return reject(format!("tag {current:?} is already in {style} case"));
            }
        }
        OpKind::ChangeFormat => {
            let Some(format) = SharedFormat::from_notation(value, tree.has_footer()) else {
                return reject("format must be written as `header...footer`".into());
            };
            if let Err(e) = format_part_ok(&format.header) {
                return reject(e);
            }
            if let Some(Err(e)) = format.footer.as_deref().map(format_part_ok) {
                return reject(e);
            }
            if &format == tree.format() {
                return reject("new format equals the current format".into());
            }
        }
        OpKind::ChangeDelimiter => {
            if value.is_empty() || value.chars().count() > policy.delimiter_max_len {
                return reject(format!(
                    "delimiter must have 1 to {} characters",
                    policy.delimiter_max_len
                ));
            }
            if !value.chars().all(delimiter_char_allowed) {
                return reject("delimiter may only contain whitespace and punctuation".into());
            }
            if value == current {
                return reject("new delimiter equals the current delimiter".into());
            }
        }
    }
    Verdict::accept("description rules hold")
}

/// C2: semantic similarity of a paraphrased text node.
pub fn check_semantics(
    old_text: &str,
    new_text: &str,
    client: &dyn EmbeddingClient,
    policy: &ValidationPolicy,
) -> Result<Verdict, EmbedError> {
    let words = old_text.split_whitespace().count();
    if words <= policy.word_count_gate {
        return Ok(Verdict::accept(format!("{words} words, semantic check not required")));
    }
    let u = client.embed(old_text)?;
    let v = client.embed(new_text)?;
    match cosine_similarity(&u, &v) {
        Ok(s) if s >= policy.similarity_threshold => {
            Ok(Verdict::accept(format!("similarity {s:.4}")).with_similarity(s))
        }
        Ok(s) => Ok(Verdict::reject(
            Condition::C2,
            format!("similarity {s:.4} below {}", policy.similarity_threshold),
        )
        .with_similarity(s)),
        Err(e) => Ok(Verdict::reject(Condition::C2, e.to_string())),
    }
}

/// Runs C1, C3 and C2 in that order, stopping at the first rejection.
pub fn validate_call(
    call: &OpCall,
    mt: &MetaTemplate,
    client: &dyn EmbeddingClient,
    policy: &ValidationPolicy,
) -> Result<Verdict, EmbedError> {
    let Some(spec) = mt.op(&call.name) else {
        return Ok(Verdict::reject(
            Condition::C1,
            format!("unknown operation `{}`", call.name),
        ));
    };
    let v = check_arguments(call, spec);
    if !v.accepted {
        return Ok(v);
    }
    let v = check_description(call, spec, mt, policy);
    if !v.accepted {
        return Ok(v);
    }
    if spec.kind == OpKind::ParaphraseText {
        let old = &mt.tree.node(&spec.target).expect("checked by C3").content;
        let new = value_literal(spec, call)
            .ok()
            .and_then(Literal::as_text)
            .unwrap_or_default();
        return check_semantics(old, new, client, policy);
    }
    Ok(Verdict::accept("valid"))
}

#[cfg(test)]
mod tests;
