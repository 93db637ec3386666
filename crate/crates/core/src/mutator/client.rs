use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ops::Inconsistency;
use crate::template::{MetaTemplate, OpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            temperature: 0.7,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no scripted response for request {0}")]
    ScriptExhausted(u64),
    #[error("{0}")]
    Config(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { status, .. } => *status == 429 || *status >= 500,
            ClientError::ScriptExhausted(_) | ClientError::Config(_) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Mutation,
    Refinement,
}

/// Everything the loop knows about one mutator request. Remote clients only
/// look at the prompt; mocks may use the structured context.
#[derive(Debug, Clone, Copy)]
pub struct MutatorRequest<'a> {
    /// Position of this request in the loop's request sequence.
    pub ordinal: u64,
    pub kind: RequestKind,
    pub prompt: &'a str,
    pub params: &'a DecodeParams,
    /// The template the operation will be applied to.
    pub template: &'a MetaTemplate,
    pub spec: &'a OpSpec,
    pub inconsistency: Option<&'a Inconsistency>,
}

pub trait MutatorClient {
    fn complete(&mut self, prompt: &str, params: &DecodeParams) -> Result<String, ClientError>;

    fn complete_request(&mut self, req: &MutatorRequest<'_>) -> Result<String, ClientError> {
        self.complete(req.prompt, req.params)
    }
}

/// Replays canned responses keyed by request ordinal.
#[derive(Debug, Clone, Default)]
pub struct TranscriptClient {
    responses: BTreeMap<u64, String>,
}

#[derive(Deserialize)]
struct ScriptLine {
    ordinal: u64,
    response: String,
}

#[derive(Deserialize)]
struct LineageLine {
    exchanges: Vec<ScriptLine>,
}

impl TranscriptClient {
    pub fn new(responses: impl IntoIterator<Item = (u64, String)>) -> Self {
        TranscriptClient {
            responses: responses.into_iter().collect(),
        }
    }

    /// Responses answered in order, starting at ordinal 0.
    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(responses.into_iter().enumerate().map(|(i, r)| (i as u64, r.into())))
    }

    /// Parses JSONL where every line is either `{"ordinal", "response"}` or a
    /// loop transcript record with an `exchanges` array.
    pub fn parse_jsonl(text: &str) -> Result<Self, ClientError> {
        let mut responses = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| ClientError::Config(format!("transcript line {}: {e}", i + 1));
            let value: serde_json::Value = serde_json::from_str(line).map_err(bad)?;
            let entries = if value.get("exchanges").is_some() {
                serde_json::from_value::<LineageLine>(value).map_err(bad)?.exchanges
            } else {
                vec![serde_json::from_value::<ScriptLine>(value).map_err(bad)?]
            };
            for e in entries {
                responses.insert(e.ordinal, e.response);
            }
        }
        Ok(TranscriptClient { responses })
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_jsonl(&text)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl MutatorClient for TranscriptClient {
    fn complete(&mut self, _prompt: &str, _params: &DecodeParams) -> Result<String, ClientError> {
        Err(ClientError::Config("transcript replay needs request ordinals".into()))
    }

    fn complete_request(&mut self, req: &MutatorRequest<'_>) -> Result<String, ClientError> {
        self.responses
            .get(&req.ordinal)
            .cloned()
            .ok_or(ClientError::ScriptExhausted(req.ordinal))
    }
}
