use serde::{Deserialize, Serialize};

use super::node::FORMAT_NODE_ID;

/// The five atomic operation types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum OpKind {
    ParaphraseText = 1,
    ParaphraseTag = 2,
    ChangeTagCase = 3,
    ChangeFormat = 4,
    ChangeDelimiter = 5,
}

impl OpKind {
    pub const ALL: [OpKind; 5] = [
        OpKind::ParaphraseText,
        OpKind::ParaphraseTag,
        OpKind::ChangeTagCase,
        OpKind::ChangeFormat,
        OpKind::ChangeDelimiter,
    ];

    pub fn is_paraphrase(self) -> bool {
        matches!(self, OpKind::ParaphraseText | OpKind::ParaphraseTag)
    }
}

impl TryFrom<u8> for OpKind {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(OpKind::ParaphraseText),
            2 => Ok(OpKind::ParaphraseTag),
            3 => Ok(OpKind::ChangeTagCase),
            4 => Ok(OpKind::ChangeFormat),
            5 => Ok(OpKind::ChangeDelimiter),
            _ => Err(format!("operation kind must be 1-5, got {v}")),
        }
    }
}

impl From<OpKind> for u8 {
    fn from(k: OpKind) -> u8 {
        k as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgType {
    String,
    Integer,
    Enum,
}

/// How an argument is interpreted when the operation is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgRole {
    /// Carries the new content (or case style).
    #[default]
    Value,
    /// Must echo the target node's current content.
    Target,
    /// Checked for type only.
    Note,
}

impl ArgRole {
    fn is_default(&self) -> bool {
        *self == ArgRole::Value
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ArgType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<i64>,
    #[serde(default, skip_serializing_if = "ArgRole::is_default")]
    pub role: ArgRole,
}

impl ArgSpec {
    pub fn string(name: impl Into<String>) -> Self {
        ArgSpec {
            name: name.into(),
            ty: ArgType::String,
            values: Vec::new(),
            max_len: None,
            min: None,
            max: None,
            role: ArgRole::Value,
        }
    }

    pub fn enumeration(name: impl Into<String>, values: &[&str]) -> Self {
        ArgSpec {
            ty: ArgType::Enum,
            values: values.iter().map(|v| v.to_string()).collect(),
            ..ArgSpec::string(name)
        }
    }

    pub fn integer(name: impl Into<String>) -> Self {
        ArgSpec {
            ty: ArgType::Integer,
            ..ArgSpec::string(name)
        }
    }

    pub fn with_role(mut self, role: ArgRole) -> Self {
        self.role = role;
        self
    }

    /// Python-flavoured type annotation used in mutator prompts.
    pub fn annotation(&self) -> String {
        match self.ty {
            ArgType::String => "str".to_string(),
            ArgType::Integer => "int".to_string(),
            ArgType::Enum => {
                let vals: Vec<String> = self.values.iter().map(|v| format!("'{v}'")).collect();
                format!("Literal[{}]", vals.join(", "))
            }
        }
    }
}

/// One entry of a meta-template's operation catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpSpec {
    pub name: String,
    pub kind: OpKind,
    /// Target node id; `GLOBAL` for the shared format node.
    pub target: String,
    #[serde(default)]
    pub args: Vec<ArgSpec>,
    pub description: String,
}

impl OpSpec {
    pub fn targets_format(&self) -> bool {
        self.target == FORMAT_NODE_ID
    }

    /// Index of the argument carrying the new value.
    pub fn value_arg(&self) -> Option<usize> {
        self.args.iter().position(|a| a.role == ArgRole::Value)
    }

    /// `name: type, ...` as shown inside the call parentheses.
    pub fn signature_args(&self) -> String {
        self.args
            .iter()
            .map(|a| format!("{}: {}", a.name, a.annotation()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Declares that a text node quotes other nodes and must be kept in sync.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyRule {
    pub watched_nodes: Vec<String>,
    pub dependent_node: String,
    /// `{old}` and `{new}` are replaced with the stale and current literals.
    pub reason_template: String,
}
