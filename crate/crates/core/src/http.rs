//! Clients for OpenAI-compatible chat-completion and embedding endpoints.
//!
//! Credentials are read from the environment variable named in the
//! [`ClientConfig`] on every request and are never stored.

use std::time::Duration;

use serde_json::{json, Value};

use crate::eval::{InferenceClient, InferenceRequest};
use crate::mutator::{ClientError, DecodeParams, MutatorClient};
use crate::store::ClientConfig;
use crate::validation::{EmbedError, EmbeddingClient};

const MAX_BACKOFF: Duration = Duration::from_secs(30);

/// Shared transport with retry and exponential backoff.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    config: ClientConfig,
    http: reqwest::blocking::Client,
    backoff: Duration,
}

impl HttpEndpoint {
    pub fn new(config: &ClientConfig) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(HttpEndpoint {
            config: config.clone(),
            http,
            backoff: Duration::from_millis(500),
        })
    }

    /// Sets the first retry delay; later delays double up to 30 s.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn model(&self) -> &str {
        &self.config.model
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn api_key(&self) -> Result<Option<String>, ClientError> {
        match &self.config.api_key_env {
            None => Ok(None),
            Some(name) => std::env::var(name)
                .map(Some)
                .map_err(|_| ClientError::Config(format!("environment variable {name} is not set"))),
        }
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, ClientError> {
        let mut req = self.http.post(url).json(body);
        if let Some(key) = self.api_key()? {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Transport(format!("malformed response: {e}")))
    }

    /// POSTs `body` to `path`, retrying transport errors, 429 and 5xx.
    pub fn post(&self, path: &str, body: &Value) -> Result<Value, ClientError> {
        let url = self.url(path);
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    attempt += 1;
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(MAX_BACKOFF);
                }
                other => return other,
            }
        }
    }
}

fn choice_texts(resp: &Value) -> Result<Vec<String>, ClientError> {
    let choices = resp
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ClientError::Transport("response has no choices".into()))?;
    choices
        .iter()
        .map(|c| {
            c.pointer("/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| ClientError::Transport("choice has no message content".into()))
        })
        .collect()
}

/// Chat-completion client used both as the mutator and for inference.
#[derive(Debug, Clone)]
pub struct ChatClient {
    endpoint: HttpEndpoint,
}

impl ChatClient {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        ChatClient { endpoint }
    }

    fn chat(
        &self,
        model: &str,
        prompt: &str,
        temperature: f64,
        max_tokens: u32,
        n: u32,
    ) -> Result<Vec<String>, ClientError> {
        let mut body = json!({
            "model": model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": temperature,
            "max_tokens": max_tokens,
        });
        if n > 1 {
            body["n"] = json!(n);
        }
        choice_texts(&self.endpoint.post("chat/completions", &body)?)
    }
}

impl MutatorClient for ChatClient {
    fn complete(&mut self, prompt: &str, params: &DecodeParams) -> Result<String, ClientError> {
        let model = self.endpoint.model().to_string();
        self.chat(&model, prompt, params.temperature, params.max_tokens, 1)?
            .into_iter()
            .next()
            .ok_or_else(|| ClientError::Transport("empty completion".into()))
    }
}

impl InferenceClient for ChatClient {
    /// Sends `model_id` as the model name. Servers that ignore `n` are
    /// queried again until enough samples arrive.
    fn generate(&self, req: &InferenceRequest<'_>) -> Result<Vec<String>, ClientError> {
        let mut out = Vec::with_capacity(req.n as usize);
        while out.len() < req.n as usize {
            let want = req.n - out.len() as u32;
            let got = self.chat(
                req.model_id,
                req.prompt,
                req.params.temperature,
                req.params.max_new_tokens,
                want,
            )?;
            if got.is_empty() {
                return Err(ClientError::Transport("server returned no choices".into()));
            }
            out.extend(got);
        }
        out.truncate(req.n as usize);
        Ok(out)
    }
}

/// Embedding client for the semantic-similarity check.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpEmbedder { endpoint }
    }
}

impl EmbeddingClient for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let body = json!({ "model": self.endpoint.model(), "input": text });
        let resp = self
            .endpoint
            .post("embeddings", &body)
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let vector = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::BadResponse("no data[0].embedding".into()))?;
        vector
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| EmbedError::BadResponse("non-numeric component".into()))
            })
            .collect()
    }
}
