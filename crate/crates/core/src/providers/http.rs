//! Live HTTP providers speaking the common chat-completions and
//! embeddings JSON wire protocol, with retries and a bounded in-flight
//! request count.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};

use super::{
    check_dimensions, check_messages, check_texts, check_token_text, ChatMessage, ChatParams,
    ChatProvider, EmbeddingVector, MessagePart, ProviderError, TextEmbedder, TokenEmbedder,
    TokenEmbeddings,
};
use crate::dataset::normalize_tokens;

/// Environment variable carrying the bearer token for live backends.
pub const API_KEY_ENV: &str = "HARCAP_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    /// Total attempts per request; transport failures and 5xx responses
    /// are retried with exponential backoff until this count is used up.
    pub max_attempts: u32,
    pub retry_base_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            max_attempts: 3,
            retry_base_ms: 200,
            max_in_flight: 4,
            timeout_secs: 120,
        }
    }
}

/// Counting semaphore bounding concurrent requests per provider handle.
struct Gate {
    limit: usize,
    state: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Gate {
            limit: limit.max(1),
            state: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.limit {
            in_flight = self.cv.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.gate.state.lock().unwrap();
        *in_flight -= 1;
        self.gate.cv.notify_one();
    }
}

struct HttpClient {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpClient {
    fn new(cfg: HttpConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let gate = Gate::new(cfg.max_in_flight);
        Ok(HttpClient { cfg, client, gate })
    }

    /// POSTs `body` to `path`, retrying transport failures and 5xx
    /// responses, and returns the parsed JSON of a 2xx answer.
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path);
        let mut last_failure = String::new();
        for attempt in 1..=self.cfg.max_attempts.max(1) {
            if attempt > 1 {
                let backoff = self.cfg.retry_base_ms << (attempt - 2);
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let _slot = self.gate.enter();
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.cfg.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Err(e) => last_failure = e.to_string(),
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp
                        .text()
                        .map_err(|e| ProviderError::Transport(e.to_string()))?;
                    if status.is_success() {
                        return serde_json::from_str(&text)
                            .map_err(|e| ProviderError::Transport(format!("bad json: {e}")));
                    }
                    if status.is_server_error() {
                        last_failure = format!("HTTP {status}: {text}");
                    } else {
                        return Err(ProviderError::Backend {
                            status: status.as_u16(),
                            body: text,
                        });
                    }
                }
            }
        }
        Err(ProviderError::Transport(format!(
            "request to {url} failed after {} attempts: {last_failure}",
            self.cfg.max_attempts
        )))
    }
}

fn message_to_json(msg: &ChatMessage) -> Value {
    let content: Vec<Value> = msg
        .parts
        .iter()
        .map(|part| match part {
            MessagePart::Text(t) => json!({ "type": "text", "text": t }),
            MessagePart::Image { data, media_type } => {
                let uri = format!("data:{media_type};base64,{}", BASE64.encode(data));
                json!({ "type": "image_url", "image_url": { "url": uri } })
            }
        })
        .collect();
    json!({ "role": msg.role.as_str(), "content": content })
}

/// Chat-vision client for `POST {base_url}/v1/chat/completions`.
pub struct HttpChatProvider {
    http: HttpClient,
}

impl HttpChatProvider {
    pub fn new(cfg: HttpConfig) -> Result<Self, ProviderError> {
        Ok(HttpChatProvider {
            http: HttpClient::new(cfg)?,
        })
    }
}

impl ChatProvider for HttpChatProvider {
    fn chat_complete(
        &self,
        messages: &[ChatMessage],
        params: &ChatParams,
    ) -> Result<String, ProviderError> {
        check_messages(messages)?;
        let body = json!({
            "model": params.model_id,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "messages": messages.iter().map(message_to_json).collect::<Vec<_>>(),
        });
        let reply = self.http.post_json("/v1/chat/completions", &body)?;
        let content = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .unwrap_or("");
        if content.is_empty() {
            return Err(ProviderError::EmptyResponse);
        }
        Ok(content.to_string())
    }
}

fn parse_embeddings(
    reply: &Value,
    expected_count: usize,
    model_id: &str,
) -> Result<Vec<EmbeddingVector>, ProviderError> {
    let data = reply
        .get("data")
        .and_then(Value::as_array)
        .ok_or(ProviderError::EmptyResponse)?;
    if data.len() != expected_count {
        return Err(ProviderError::Transport(format!(
            "expected {expected_count} embeddings, got {}",
            data.len()
        )));
    }
    let mut indexed: Vec<(usize, EmbeddingVector)> = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = item
            .get("index")
            .and_then(Value::as_u64)
            .map(|i| i as usize)
            .unwrap_or(pos);
        let values: Vec<f64> = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or(ProviderError::EmptyResponse)?
            .iter()
            .map(|v| v.as_f64().ok_or(ProviderError::EmptyResponse))
            .collect::<Result<_, _>>()?;
        indexed.push((index, EmbeddingVector::new(values, model_id)?));
    }
    indexed.sort_by_key(|(i, _)| *i);
    let vectors: Vec<EmbeddingVector> = indexed.into_iter().map(|(_, v)| v).collect();
    check_dimensions(&vectors)?;
    Ok(vectors)
}

/// Sentence-embedding client for `POST {base_url}/v1/embeddings`.
pub struct HttpTextEmbedder {
    http: HttpClient,
    model_id: String,
}

impl HttpTextEmbedder {
    pub fn new(cfg: HttpConfig, model_id: impl Into<String>) -> Result<Self, ProviderError> {
        Ok(HttpTextEmbedder {
            http: HttpClient::new(cfg)?,
            model_id: model_id.into(),
        })
    }

    fn embed(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body = json!({ "model": self.model_id, "input": inputs });
        let reply = self.http.post_json("/v1/embeddings", &body)?;
        parse_embeddings(&reply, inputs.len(), &self.model_id)
    }
}

impl TextEmbedder for HttpTextEmbedder {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        check_texts(texts)?;
        self.embed(texts)
    }
}

/// Token-embedding fallback over the embeddings wire protocol: the text
/// is tokenized locally and each token embedded individually, for
/// backends without native token-level output. A native in-process BERT
/// path is intentionally out of scope.
pub struct HttpTokenEmbedder {
    embedder: HttpTextEmbedder,
}

impl HttpTokenEmbedder {
    pub fn new(cfg: HttpConfig, model_id: impl Into<String>) -> Result<Self, ProviderError> {
        Ok(HttpTokenEmbedder {
            embedder: HttpTextEmbedder::new(cfg, model_id)?,
        })
    }
}

impl TokenEmbedder for HttpTokenEmbedder {
    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings, ProviderError> {
        check_token_text(text)?;
        let tokens = normalize_tokens(text);
        if tokens.is_empty() {
            return Err(ProviderError::EmptyTokenization);
        }
        let vectors = self.embedder.embed(&tokens)?;
        Ok(TokenEmbeddings { tokens, vectors })
    }
}
