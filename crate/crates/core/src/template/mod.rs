//! Syntax-tree model of prompt templates.
//!
//! A template is an ordered sequence of top-level segments (plain text or
//! tagged sections) separated by delimiter nodes. Every section renders its
//! tag through one shared format node, so changing the format rewraps all
//! section headers (and footers, when the template declares them) at once.
//! Instance data is marked with `{{name}}` slots inside text nodes.

mod node;
mod spec;
mod tree;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ops::{CaseStyle, OpCall};
use crate::util::canonical_json;

pub use node::{Mention, MentionForm, Node, NodeKind, FORMAT_NODE_ID};
pub use spec::{ArgRole, ArgSpec, ArgType, ConsistencyRule, OpKind, OpSpec};
pub use tree::{slot_markers, Section, Segment, SharedFormat, SyntaxTree};

pub(crate) use tree::{check_format_pattern, check_tag_content, is_identifier};

/// Version written to and accepted from meta-template documents.
pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invariant violated at node `{node}`: {message}")]
    Invariant { node: String, message: String },
    #[error("no value for slot `{0}`")]
    MissingSlot(String),
}

impl TemplateError {
    pub(crate) fn invariant(node: &str, message: impl Into<String>) -> Self {
        TemplateError::Invariant {
            node: node.to_string(),
            message: message.into(),
        }
    }
}

/// A syntax tree together with its operation catalog, consistency rules and
/// the operations applied since the original seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaTemplate {
    pub task_id: String,
    pub tree: SyntaxTree,
    pub op_catalog: Vec<OpSpec>,
    pub consistency_rules: Vec<ConsistencyRule>,
    pub lineage: Vec<OpCall>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u32,
    task_id: String,
    nodes: Vec<Node>,
    segments: Vec<Segment>,
    shared_format: SharedFormat,
    #[serde(default)]
    placeholders: Vec<String>,
    #[serde(default)]
    consistency_rules: Vec<ConsistencyRule>,
    #[serde(default)]
    operations: Vec<OpSpec>,
    #[serde(default)]
    lineage: Vec<OpCall>,
}

impl MetaTemplate {
    pub fn new(
        task_id: impl Into<String>,
        tree: SyntaxTree,
        op_catalog: Vec<OpSpec>,
        consistency_rules: Vec<ConsistencyRule>,
    ) -> Result<Self, TemplateError> {
        let mt = MetaTemplate {
            task_id: task_id.into(),
            tree,
            op_catalog,
            consistency_rules,
            lineage: Vec::new(),
        };
        mt.validate()?;
        Ok(mt)
    }

    /// Parses a meta-template document.
    pub fn parse(doc: &str) -> Result<Self, TemplateError> {
        let raw: serde_json::Value = serde_json::from_str(doc).map_err(|e| TemplateError::Schema(e.to_string()))?;
        match raw.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == DOCUMENT_VERSION as u64 => {}
            Some(v) => return Err(TemplateError::Schema(format!("unsupported document version {v}"))),
            None => return Err(TemplateError::Schema("missing field `version`".into())),
        }
        let doc: Document = serde_json::from_value(raw).map_err(|e| TemplateError::Schema(e.to_string()))?;
        let tree = SyntaxTree::new(doc.nodes, doc.shared_format, doc.segments, doc.placeholders)?;
        let mt = MetaTemplate {
            task_id: doc.task_id,
            tree,
            op_catalog: doc.operations,
            consistency_rules: doc.consistency_rules,
            lineage: doc.lineage,
        };
        mt.validate()?;
        Ok(mt)
    }

    /// Canonical document form: nodes in traversal order, sorted keys, LF
    /// line endings and a trailing newline.
    pub fn to_document(&self) -> String {
        let order = self.tree.traversal_order();
        let nodes: Vec<Node> = order.iter().map(|id| self.tree.nodes[*id].clone()).collect();
        let doc = Document {
            version: DOCUMENT_VERSION,
            task_id: self.task_id.clone(),
            nodes,
            segments: self.tree.segments.clone(),
            shared_format: self.tree.format.clone(),
            placeholders: self.tree.placeholders.clone(),
            consistency_rules: self.consistency_rules.clone(),
            operations: self.op_catalog.clone(),
            lineage: self.lineage.clone(),
        };
        let value = serde_json::to_value(&doc).expect("document serializes");
        let mut s = serde_json::to_string_pretty(&canonical_json(value)).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn render(&self) -> String {
        self.tree.render()
    }

    pub fn op(&self, name: &str) -> Option<&OpSpec> {
        self.op_catalog.iter().find(|s| s.name == name)
    }

    /// The same template with an empty lineage.
    pub fn without_lineage(&self) -> MetaTemplate {
        MetaTemplate {
            lineage: Vec::new(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        self.tree.validate()?;
        let mut names = BTreeSet::new();
        for spec in &self.op_catalog {
            if !is_identifier(&spec.name) {
                return Err(TemplateError::Schema(format!(
                    "operation name {:?} is not an identifier",
                    spec.name
                )));
            }
            if !names.insert(spec.name.as_str()) {
                return Err(TemplateError::Schema(format!(
                    "duplicate operation name `{}`",
                    spec.name
                )));
            }
            self.check_op_spec(spec)?;
        }
        for (i, rule) in self.consistency_rules.iter().enumerate() {
            if rule.watched_nodes.is_empty() {
                return Err(TemplateError::Schema(format!(
                    "consistency rule {i}: watched_nodes is empty"
                )));
            }
            for w in &rule.watched_nodes {
                if self.tree.kind_of(w).is_none() {
                    return Err(TemplateError::Schema(format!(
                        "consistency rule {i}: unknown watched node `{w}`"
                    )));
                }
            }
            if self.tree.kind_of(&rule.dependent_node) != Some(NodeKind::Text) {
                return Err(TemplateError::invariant(
                    &rule.dependent_node,
                    format!("consistency rule {i}: dependent node must be an existing text node"),
                ));
            }
        }
        for call in &self.lineage {
            if self.op(&call.name).is_none() {
                return Err(TemplateError::Schema(format!(
                    "lineage refers to unknown operation `{}`",
                    call.name
                )));
            }
        }
        Ok(())
    }

    fn check_op_spec(&self, spec: &OpSpec) -> Result<(), TemplateError> {
        let err = |m: String| TemplateError::Schema(format!("operation `{}`: {m}", spec.name));
        let expected = match spec.kind {
            OpKind::ParaphraseText => NodeKind::Text,
            OpKind::ParaphraseTag | OpKind::ChangeTagCase => NodeKind::Tag,
            OpKind::ChangeFormat => NodeKind::Format,
            OpKind::ChangeDelimiter => NodeKind::Delimiter,
        };
        match self.tree.kind_of(&spec.target) {
            None => return Err(err(format!("unknown target node `{}`", spec.target))),
            Some(k) if k != expected => {
                return Err(err(format!("kind {} cannot target a {k} node", u8::from(spec.kind))))
            }
            Some(_) => {}
        }
        let mut arg_names = BTreeSet::new();
        for a in &spec.args {
            if !arg_names.insert(a.name.as_str()) {
                return Err(err(format!("duplicate argument `{}`", a.name)));
            }
            if a.ty == ArgType::Enum && a.values.is_empty() {
                return Err(err(format!("enum argument `{}` has no values", a.name)));
            }
            if a.role == ArgRole::Target && a.ty != ArgType::String {
                return Err(err(format!("target argument `{}` must be a string", a.name)));
            }
        }
        let values: Vec<&ArgSpec> = spec.args.iter().filter(|a| a.role == ArgRole::Value).collect();
        let [value] = values.as_slice() else {
            return Err(err(format!(
                "expected exactly one value argument, found {}",
                values.len()
            )));
        };
        match spec.kind {
            OpKind::ChangeTagCase => {
                if value.ty != ArgType::Enum || value.values.iter().any(|v| v.parse::<CaseStyle>().is_err()) {
                    return Err(err("case argument must be an enum of case styles".into()));
                }
            }
            _ => {
                if value.ty != ArgType::String {
                    return Err(err("value argument must be a string".into()));
                }
            }
        }
        Ok(())
    }
}

/// One benchmark data row used to fill a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub instance_id: String,
    #[serde(default)]
    pub slot_values: BTreeMap<String, String>,
    #[serde(default)]
    pub judge_payload: serde_json::Value,
}

/// Replaces every `{{name}}` marker with the instance's value. Values are
/// inserted verbatim and never rescanned.
pub fn instantiate_prompt(template: &str, instance: &TaskInstance) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let marker = after
            .find("}}")
            .map(|end| &after[..end])
            .filter(|name| is_identifier(name));
        match marker {
            Some(name) => {
                let value = instance
                    .slot_values
                    .get(name)
                    .ok_or_else(|| TemplateError::MissingSlot(name.to_string()))?;
                out.push_str(&rest[..start]);
                out.push_str(value);
                rest = &after[name.len() + 2..];
            }
            None => {
                out.push_str(&rest[..start + 2]);
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}
