use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::node::{placeholder_count, Mention, MentionForm, Node, NodeKind, FORMAT_NODE_ID};
use super::TemplateError;

/// The format node shared by every section header (and footer).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedFormat {
    pub header: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footer: Option<String>,
}

impl SharedFormat {
    pub fn header_for(&self, tag: &str) -> String {
        self.header.replacen("{}", tag, 1)
    }

    pub fn footer_for(&self, tag: &str) -> Option<String> {
        self.footer.as_ref().map(|f| f.replacen("{}", tag, 1))
    }

    /// Notation used in operation arguments: `header...footer` when a footer
    /// exists, the bare header otherwise.
    pub fn notation(&self) -> String {
        match &self.footer {
            Some(f) => format!("{}...{}", self.header, f),
            None => self.header.clone(),
        }
    }

    /// Parses the `header...footer` notation. `with_footer` selects whether a
    /// footer part is expected.
    pub fn from_notation(s: &str, with_footer: bool) -> Option<SharedFormat> {
        if with_footer {
            let mut parts = s.split("...");
            let header = parts.next()?;
            let footer = parts.next()?;
            if parts.next().is_some() {
                return None;
            }
            Some(SharedFormat {
                header: header.to_string(),
                footer: Some(footer.to_string()),
            })
        } else {
            Some(SharedFormat {
                header: s.to_string(),
                footer: None,
            })
        }
    }
}

/// Checks a single format pattern (header or footer).
pub(crate) fn check_format_pattern(p: &str) -> Result<(), String> {
    if placeholder_count(p) != 1 {
        return Err(format!("format pattern {p:?} must contain exactly one `{{}}`"));
    }
    if p.contains("{{") || p.contains("}}") {
        return Err(format!("format pattern {p:?} must not contain double braces"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub tag: String,
    #[serde(default)]
    pub body: Vec<String>,
}

/// One entry of the top-level sequence. Segments and delimiters alternate,
/// starting and ending with a segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Text(String),
    Section(Section),
    Delimiter(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxTree {
    pub(crate) nodes: BTreeMap<String, Node>,
    pub(crate) format: SharedFormat,
    pub(crate) segments: Vec<Segment>,
    pub(crate) placeholders: Vec<String>,
}

impl SyntaxTree {
    /// Builds and validates a tree.
    pub fn new(
        nodes: Vec<Node>,
        format: SharedFormat,
        segments: Vec<Segment>,
        placeholders: Vec<String>,
    ) -> Result<Self, TemplateError> {
        let mut map = BTreeMap::new();
        for node in nodes {
            if node.kind == NodeKind::Format {
                return Err(TemplateError::Schema(format!(
                    "node `{}`: the format node is declared through `shared_format`",
                    node.id
                )));
            }
            if node.id.is_empty() || node.id == FORMAT_NODE_ID {
                return Err(TemplateError::invariant(&node.id, "node id is empty or reserved"));
            }
            let id = node.id.clone();
            if map.insert(id.clone(), node).is_some() {
                return Err(TemplateError::invariant(&id, "duplicate node id"));
            }
        }
        let mut placeholders = placeholders;
        placeholders.sort();
        placeholders.dedup();
        let tree = SyntaxTree {
            nodes: map,
            format,
            segments,
            placeholders,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn format(&self) -> &SharedFormat {
        &self.format
    }

    pub fn has_footer(&self) -> bool {
        self.format.footer.is_some()
    }

    pub fn items(&self) -> &[Segment] {
        &self.segments
    }

    /// Top-level segments without the delimiters between them.
    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| !matches!(s, Segment::Delimiter(_)))
    }

    /// Delimiter nodes separating the top-level segments, in order.
    pub fn delimiters(&self) -> impl Iterator<Item = &Node> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Delimiter(id) => self.nodes.get(id),
            _ => None,
        })
    }

    pub fn sections(&self) -> impl Iterator<Item = &Section> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Section(sec) => Some(sec),
            _ => None,
        })
    }

    pub fn placeholders(&self) -> &[String] {
        &self.placeholders
    }

    pub fn kind_of(&self, id: &str) -> Option<NodeKind> {
        if id == FORMAT_NODE_ID {
            Some(NodeKind::Format)
        } else {
            self.nodes.get(id).map(|n| n.kind)
        }
    }

    /// The multiset of `(id, kind)` pairs, including the shared format node.
    pub fn node_signature(&self) -> Vec<(String, NodeKind)> {
        let mut sig: Vec<_> = self.nodes.values().map(|n| (n.id.clone(), n.kind)).collect();
        sig.push((FORMAT_NODE_ID.to_string(), NodeKind::Format));
        sig.sort();
        sig
    }

    /// Node ids in traversal (render) order.
    pub fn traversal_order(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.nodes.len());
        for item in &self.segments {
            match item {
                Segment::Text(id) | Segment::Delimiter(id) => out.push(id.as_str()),
                Segment::Section(sec) => {
                    out.push(sec.tag.as_str());
                    out.extend(sec.body.iter().map(String::as_str));
                }
            }
        }
        out
    }

    /// Current rendering of what a mention quotes.
    pub fn mention_form(&self, node: &str, form: MentionForm) -> Option<String> {
        let n = self.nodes.get(node)?;
        match (n.kind, form) {
            (NodeKind::Tag, MentionForm::Header) => Some(self.format.header_for(&n.content)),
            (NodeKind::Tag, MentionForm::Footer) => self.format.footer_for(&n.content),
            (_, MentionForm::Bare) => Some(n.content.clone()),
            _ => None,
        }
    }

    /// Renders the template by traversing the tree.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for item in &self.segments {
            match item {
                Segment::Text(id) | Segment::Delimiter(id) => out.push_str(&self.nodes[id].content),
                Segment::Section(sec) => {
                    let tag = &self.nodes[&sec.tag].content;
                    out.push_str(&self.format.header_for(tag));
                    for child in &sec.body {
                        out.push_str(&self.nodes[child].content);
                    }
                    if let Some(footer) = self.format.footer_for(tag) {
                        out.push_str(&footer);
                    }
                }
            }
        }
        out
    }

    pub(crate) fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.get_mut(id)
    }

    pub(crate) fn set_format(&mut self, format: SharedFormat) {
        self.format = format;
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        check_format_pattern(&self.format.header).map_err(|m| TemplateError::invariant(FORMAT_NODE_ID, m))?;
        if let Some(footer) = &self.format.footer {
            check_format_pattern(footer).map_err(|m| TemplateError::invariant(FORMAT_NODE_ID, m))?;
        }

        for node in self.nodes.values() {
            match node.kind {
                NodeKind::Tag => check_tag_content(&node.content).map_err(|m| TemplateError::invariant(&node.id, m))?,
                NodeKind::Delimiter => {
                    check_delimiter_content(&node.content).map_err(|m| TemplateError::invariant(&node.id, m))?
                }
                NodeKind::Text => {
                    let markers = slot_markers(&node.content).map_err(|m| TemplateError::invariant(&node.id, m))?;
                    for name in markers {
                        if self.placeholders.binary_search(&name).is_err() {
                            return Err(TemplateError::invariant(
                                &node.id,
                                format!("slot `{{{{{name}}}}}` is not declared in placeholders"),
                            ));
                        }
                    }
                }
                NodeKind::Format => unreachable!("format node stored separately"),
            }
            if node.kind != NodeKind::Text && !node.mentions.is_empty() {
                return Err(TemplateError::invariant(&node.id, "only text nodes carry mentions"));
            }
            for m in &node.mentions {
                self.check_mention(&node.id, &node.content, m)?;
            }
        }

        self.check_structure()?;

        let used: BTreeSet<String> = self
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Text)
            .flat_map(|n| slot_markers(&n.content).unwrap_or_default())
            .collect();
        for p in &self.placeholders {
            if !is_identifier(p) {
                return Err(TemplateError::Schema(format!(
                    "placeholder name {p:?} is not an identifier"
                )));
            }
            if !used.contains(p) {
                return Err(TemplateError::Schema(format!("placeholder `{p}` is never used")));
            }
        }
        Ok(())
    }

    fn check_mention(&self, owner: &str, content: &str, m: &Mention) -> Result<(), TemplateError> {
        let Some(target) = self.nodes.get(&m.node) else {
            return Err(TemplateError::invariant(
                owner,
                format!("mention refers to unknown node `{}`", m.node),
            ));
        };
        match (target.kind, m.form) {
            (NodeKind::Tag, MentionForm::Footer) if !self.has_footer() => {
                return Err(TemplateError::invariant(
                    owner,
                    "footer mention but template has no footers",
                ));
            }
            (NodeKind::Tag, _) | (_, MentionForm::Bare) => {}
            _ => {
                return Err(TemplateError::invariant(
                    owner,
                    format!("mention of {} node `{}` must use the bare form", target.kind, m.node),
                ))
            }
        }
        if m.literal.is_empty() || !content.contains(&m.literal) {
            return Err(TemplateError::invariant(
                owner,
                format!("mention literal {:?} does not occur in the text", m.literal),
            ));
        }
        Ok(())
    }

    fn check_structure(&self) -> Result<(), TemplateError> {
        if self.segments.is_empty() {
            return Err(TemplateError::Schema("segments must not be empty".into()));
        }
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let mut expect = |id: &str, kinds: &[NodeKind], at: &str| -> Result<(), TemplateError> {
            let Some(node) = self.nodes.get(id) else {
                return Err(TemplateError::Schema(format!("{at} refers to unknown node `{id}`")));
            };
            if !kinds.contains(&node.kind) {
                return Err(TemplateError::invariant(
                    id,
                    format!("{} node cannot appear as {at}", node.kind),
                ));
            }
            *seen.entry(node.id.as_str()).or_default() += 1;
            Ok(())
        };
        for (i, item) in self.segments.iter().enumerate() {
            let delimiter_slot = i % 2 == 1;
            match item {
                Segment::Delimiter(id) => {
                    if !delimiter_slot {
                        return Err(TemplateError::Schema(format!(
                            "segment {i}: delimiters must sit between two segments"
                        )));
                    }
                    expect(id, &[NodeKind::Delimiter], "a top-level delimiter")?;
                }
                Segment::Text(id) => {
                    if delimiter_slot {
                        return Err(TemplateError::Schema(format!("segment {i}: expected a delimiter")));
                    }
                    expect(id, &[NodeKind::Text], "a text segment")?;
                }
                Segment::Section(sec) => {
                    if delimiter_slot {
                        return Err(TemplateError::Schema(format!("segment {i}: expected a delimiter")));
                    }
                    expect(&sec.tag, &[NodeKind::Tag], "a section tag")?;
                    for child in &sec.body {
                        expect(child, &[NodeKind::Text, NodeKind::Delimiter], "a section body item")?;
                    }
                }
            }
        }
        if self.segments.len().is_multiple_of(2) {
            return Err(TemplateError::Schema(
                "segments must end with a segment, not a delimiter".into(),
            ));
        }
        for node in self.nodes.values() {
            match seen.get(node.id.as_str()) {
                Some(1) => {}
                Some(_) => return Err(TemplateError::invariant(&node.id, "node is referenced more than once")),
                None => {
                    return Err(TemplateError::invariant(
                        &node.id,
                        "node is not referenced by any segment",
                    ))
                }
            }
        }
        let mut tags = BTreeSet::new();
        for sec in self.sections() {
            if !tags.insert(self.nodes[&sec.tag].content.as_str()) {
                return Err(TemplateError::invariant(
                    &sec.tag,
                    "two sections share the same tag text",
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_tag_content(s: &str) -> Result<(), String> {
    if s.trim().is_empty() {
        return Err("tag must be non-empty".into());
    }
    if s.contains('\n') || s.contains('\r') {
        return Err("tag must not contain line breaks".into());
    }
    if s.contains('{') || s.contains('}') {
        return Err("tag must not contain braces".into());
    }
    Ok(())
}

pub(crate) fn check_delimiter_content(s: &str) -> Result<(), String> {
    if s.is_empty() {
        return Err("delimiter must be non-empty".into());
    }
    if s.contains("{}") || s.contains("{{") || s.contains("}}") {
        return Err("delimiter must not contain a placeholder token".into());
    }
    Ok(())
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic())
        && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

/// Slot marker names (`{{name}}`) in order of appearance. Any `{{` that does
/// not open a well-formed marker is an error.
pub fn slot_markers(s: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            return Err(format!("unterminated slot marker near {:?}", &rest[start..]));
        };
        let name = &after[..end];
        if !is_identifier(name) {
            return Err(format!("malformed slot marker `{{{{{name}}}}}`"));
        }
        out.push(name.to_string());
        rest = &after[end + 2..];
    }
    Ok(out)
}
