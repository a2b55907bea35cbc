//! Model-service abstractions: chat-vision completion, sentence
//! embedding, and token-level embedding. Each has a live HTTP
//! implementation speaking the common chat-completions/embeddings JSON
//! wire protocol and a deterministic offline mock.

mod http;
mod mock;

pub use http::{HttpChatProvider, HttpConfig, HttpTextEmbedder, HttpTokenEmbedder};
pub use mock::{HashTextEmbedder, HashTokenEmbedder, MockChatProvider, ScriptedChatProvider};

use thiserror::Error;

/// Fixed judge instruction; the judge prompt must carry it verbatim and
/// the mock chat backend recognizes judge requests by it.
pub const JUDGE_INSTRUCTION: &str = "Output only True or False.";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("embedding dimension drift: expected {expected}, got {got}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("text produced no tokens")]
    EmptyTokenization,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
        }
    }
}

/// One message part: text, or an image payload with its media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessagePart {
    Text(String),
    Image { data: Vec<u8>, media_type: String },
}

/// Raw image bytes plus media type, as handed to prompt builders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub data: Vec<u8>,
    pub media_type: String,
}

impl ImagePayload {
    pub fn new(data: Vec<u8>, media_type: impl Into<String>) -> Self {
        ImagePayload {
            data,
            media_type: media_type.into(),
        }
    }

    pub fn into_part(self) -> MessagePart {
        MessagePart::Image {
            data: self.data,
            media_type: self.media_type,
        }
    }
}

/// A chat message with at least one part; image payloads are non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<MessagePart>,
}

impl ChatMessage {
    pub fn new(role: Role, parts: Vec<MessagePart>) -> Result<Self, ProviderError> {
        if parts.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "chat message needs at least one part".into(),
            ));
        }
        for p in &parts {
            if let MessagePart::Image { data, .. } = p {
                if data.is_empty() {
                    return Err(ProviderError::InvalidRequest(
                        "image payload is empty".into(),
                    ));
                }
            }
        }
        Ok(ChatMessage { role, parts })
    }

    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            parts: vec![MessagePart::Text(text.into())],
        }
    }

    /// Concatenated text parts, used for logging and content-keyed mocks.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for p in &self.parts {
            if let MessagePart::Text(t) = p {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(t);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatParams {
    pub model_id: String,
    pub max_tokens: u32,
    /// Defaults to 0 so backends that honor it are deterministic.
    pub temperature: f64,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams {
            model_id: "default".into(),
            max_tokens: 256,
            temperature: 0.0,
        }
    }
}

/// A fixed-length finite real vector tagged with the producing model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "embedding vector is empty".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::InvalidRequest(
                "embedding vector has non-finite values".into(),
            ));
        }
        Ok(EmbeddingVector {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// Token strings paired one-to-one with their embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub tokens: Vec<String>,
    pub vectors: Vec<EmbeddingVector>,
}

pub trait ChatProvider: Send + Sync {
    fn chat_complete(
        &self,
        messages: &[ChatMessage],
        params: &ChatParams,
    ) -> Result<String, ProviderError>;
}

pub trait TextEmbedder: Send + Sync {
    /// One vector per input text, order-preserving, constant dimension.
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

pub trait TokenEmbedder: Send + Sync {
    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings, ProviderError>;
}

pub(crate) fn check_messages(messages: &[ChatMessage]) -> Result<(), ProviderError> {
    if messages.is_empty() {
        return Err(ProviderError::InvalidRequest("no messages".into()));
    }
    Ok(())
}

pub(crate) fn check_texts(texts: &[String]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidRequest("no texts to embed".into()));
    }
    if texts.iter().any(String::is_empty) {
        return Err(ProviderError::InvalidRequest(
            "cannot embed an empty text".into(),
        ));
    }
    Ok(())
}

pub(crate) fn check_token_text(text: &str) -> Result<(), ProviderError> {
    if text.is_empty() {
        return Err(ProviderError::InvalidRequest(
            "cannot token-embed an empty text".into(),
        ));
    }
    Ok(())
}

/// Checks that every vector in a batch has the same dimension.
pub(crate) fn check_dimensions(vectors: &[EmbeddingVector]) -> Result<(), ProviderError> {
    if let Some(first) = vectors.first() {
        let expected = first.dimension();
        for v in vectors {
            if v.dimension() != expected {
                return Err(ProviderError::DimensionDrift {
                    expected,
                    got: v.dimension(),
                });
            }
        }
    }
    Ok(())
}
