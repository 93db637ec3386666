use serde::{Deserialize, Serialize};

/// Reserved id of the single shared format node.
pub const FORMAT_NODE_ID: &str = "GLOBAL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Text,
    Format,
    Tag,
    Delimiter,
}

impl std::fmt::Display for NodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NodeKind::Text => "text",
            NodeKind::Format => "format",
            NodeKind::Tag => "tag",
            NodeKind::Delimiter => "delimiter",
        };
        f.write_str(s)
    }
}

/// Which rendering of the referenced node a mention quotes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionForm {
    /// Tag inserted into the shared format header, e.g. `[ANS]`.
    #[default]
    Header,
    /// Tag inserted into the shared format footer, e.g. `[\ANS]`.
    Footer,
    /// The node's raw content.
    Bare,
}

impl MentionForm {
    fn is_default(&self) -> bool {
        *self == MentionForm::Header
    }
}

/// A literal inside a text node that quotes another node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub node: String,
    pub literal: String,
    #[serde(default, skip_serializing_if = "MentionForm::is_default")]
    pub form: MentionForm,
}

/// A text, tag or delimiter node. The format node is held separately as
/// [`SharedFormat`](super::SharedFormat).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mentions: Vec<Mention>,
}

impl Node {
    pub fn text(id: impl Into<String>, content: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            kind: NodeKind::Text,
            content: content.into(),
            mentions: Vec::new(),
        }
    }

    pub fn tag(id: impl Into<String>, content: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            kind: NodeKind::Tag,
            content: content.into(),
            mentions: Vec::new(),
        }
    }

    pub fn delimiter(id: impl Into<String>, content: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            kind: NodeKind::Delimiter,
            content: content.into(),
            mentions: Vec::new(),
        }
    }

    pub fn with_mention(mut self, node: impl Into<String>, literal: impl Into<String>, form: MentionForm) -> Self {
        self.mentions.push(Mention {
            node: node.into(),
            literal: literal.into(),
            form,
        });
        self
    }
}

/// Number of non-overlapping `{}` tokens in `s`.
pub(crate) fn placeholder_count(s: &str) -> usize {
    s.matches("{}").count()
}
