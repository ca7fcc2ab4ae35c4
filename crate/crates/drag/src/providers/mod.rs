//! Contracts for chat-completion and text-embedding backends.
//!
//! Three implementations ship with the crate: [`mock::ScriptedChatProvider`]
//! replays canned responses keyed by request fingerprint, [`mock::ProceduralProvider`]
//! synthesizes well-formed responses deterministically for desk-scale offline
//! runs, and [`http::HttpChatProvider`] speaks a chat-completion-style JSON
//! protocol against hosted endpoints.
//!
//! All pipeline prompts are rendered by [`prompts`] and pinned by golden tests.

pub mod http;
pub mod mock;
pub mod prompts;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Default decoding settings for every pipeline call. Deterministic decoding
/// keeps replays byte-identical; the sampling settings upstream models would
/// use are unknown.
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

/// Error type for provider operations.
#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    /// Network or backend trouble; safe to retry.
    #[error("transport failure: {0}")]
    Transport(String),

    /// Credentials rejected or missing; terminal.
    #[error("authentication failure: {0}")]
    Auth(String),

    /// A scripted provider had no entry for the request.
    #[error("fixture miss in {provider_id}: no entry for fingerprint {fingerprint}")]
    FixtureMiss {
        provider_id: String,
        fingerprint: String,
    },

    /// The backend answered with something the client cannot interpret.
    #[error("malformed backend payload: {0}")]
    MalformedPayload(String),

    /// The request violated an invariant before any call was made.
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    /// An embedding batch came back with inconsistent dimensions.
    #[error("embedding dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A guard refused to transmit the payload (see the privacy module).
    #[error("payload blocked before transmission: {0}")]
    PayloadBlocked(String),
}

/// Message role in a chat conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// One message in a chat request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A validated chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Build a request, enforcing the invariants: non-empty messages, first
    /// message system or user, finite non-negative temperature, positive
    /// max_tokens.
    pub fn new(
        model_id: impl Into<String>,
        messages: Vec<ChatMessage>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, ProviderError> {
        if messages.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "messages must be non-empty".into(),
            ));
        }
        if messages[0].role == Role::Assistant {
            return Err(ProviderError::InvalidRequest(
                "first message role must be system or user".into(),
            ));
        }
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be finite and non-negative, got {temperature}"
            )));
        }
        if max_tokens == 0 {
            return Err(ProviderError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(Self {
            model_id: model_id.into(),
            messages,
            temperature,
            max_tokens,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// Stable fingerprint of (model_id, message roles+contents, temperature,
    /// max_tokens). Used as the fixture and cache key, so it must be
    /// insensitive to transport encoding; the seed is deliberately excluded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"model\x1f");
        hasher.update(self.model_id.as_bytes());
        hasher.update(b"\x1etemperature\x1f");
        hasher.update(format!("{:.6}", self.temperature).as_bytes());
        hasher.update(b"\x1emax_tokens\x1f");
        hasher.update(self.max_tokens.to_string().as_bytes());
        for message in &self.messages {
            hasher.update(b"\x1emsg\x1f");
            hasher.update(message.role.as_str().as_bytes());
            hasher.update(b"\x1f");
            hasher.update(message.content.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// The system message content, when the first message carries one.
    pub fn system_content(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|message| message.role == Role::System)
            .map(|message| message.content.as_str())
    }

    /// The last user message content.
    pub fn last_user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|message| message.role == Role::User)
            .map(|message| message.content.as_str())
    }
}

/// Prompt and completion token counts as reported by the backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A chat completion: the first candidate only, by contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub token_usage: TokenUsage,
    pub provider_id: String,
}

/// A fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "embedding vector must have positive dimension".into(),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(ProviderError::MalformedPayload(format!(
                "embedding contains non-finite entry {bad}"
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Chat-completion backend. Implementations carry no mutable per-call state,
/// so one handle can serve concurrent in-flight requests.
pub trait ChatProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    /// Return the backend's first candidate completion for the request.
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

/// Text-embedding backend. Output is order-preserving: vector `i` embeds
/// input `i`, and every vector in a batch has the same dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

/// Reject empty batches and blank texts before they reach a backend.
pub(crate) fn validate_embedding_inputs(texts: &[String]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidRequest(
            "embedding batch must be non-empty".into(),
        ));
    }
    if let Some(pos) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(ProviderError::InvalidRequest(format!(
            "embedding input {pos} is empty after trimming"
        )));
    }
    Ok(())
}

/// A chat provider paired with the model id and decoding settings every
/// pipeline call uses. Cloning is cheap; the provider is shared.
#[derive(Clone)]
pub struct ChatHandle {
    provider: Arc<dyn ChatProvider>,
    model_id: String,
    temperature: f64,
    max_tokens: u32,
    seed: Option<u64>,
}

impl ChatHandle {
    pub fn new(provider: Arc<dyn ChatProvider>, model_id: impl Into<String>) -> Self {
        Self {
            provider,
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn provider(&self) -> &Arc<dyn ChatProvider> {
        &self.provider
    }

    /// Replace the provider while keeping model id and decoding settings.
    /// Used to interpose caching or guard wrappers.
    pub fn with_provider(&self, provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }

    /// Build the full request this handle would send for the given messages.
    pub fn request(&self, messages: Vec<ChatMessage>) -> Result<ChatRequest, ProviderError> {
        Ok(
            ChatRequest::new(&self.model_id, messages, self.temperature, self.max_tokens)?
                .with_seed(self.seed),
        )
    }

    pub fn complete(&self, messages: Vec<ChatMessage>) -> Result<ChatResponse, ProviderError> {
        let request = self.request(messages)?;
        self.provider.chat_complete(&request)
    }
}

impl std::fmt::Debug for ChatHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatHandle")
            .field("provider_id", &self.provider.provider_id())
            .field("model_id", &self.model_id)
            .field("temperature", &self.temperature)
            .field("max_tokens", &self.max_tokens)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_rejects_empty_messages() {
        let err = ChatRequest::new("m", vec![], 0.0, 100).unwrap_err();
        assert!(matches!(err, ProviderError::InvalidRequest(_)));
    }

    #[test]
    fn request_rejects_assistant_first() {
        let err = ChatRequest::new("m", vec![ChatMessage::assistant("hi")], 0.0, 100).unwrap_err();
        assert!(matches!(err, ProviderError::InvalidRequest(_)));
    }

    #[test]
    fn request_rejects_bad_temperature() {
        for t in [f64::NAN, f64::INFINITY, -0.5] {
            let err = ChatRequest::new("m", vec![ChatMessage::user("q")], t, 100).unwrap_err();
            assert!(matches!(err, ProviderError::InvalidRequest(_)), "t={t}");
        }
    }

    #[test]
    fn fingerprint_is_stable_and_field_sensitive() {
        let base = ChatRequest::new(
            "model-a",
            vec![ChatMessage::system("s"), ChatMessage::user("u")],
            0.0,
            1024,
        )
        .unwrap();
        assert_eq!(base.fingerprint(), base.fingerprint());

        let other_model = ChatRequest::new(
            "model-b",
            vec![ChatMessage::system("s"), ChatMessage::user("u")],
            0.0,
            1024,
        )
        .unwrap();
        assert_ne!(base.fingerprint(), other_model.fingerprint());

        let other_content = ChatRequest::new(
            "model-a",
            vec![ChatMessage::system("s"), ChatMessage::user("u2")],
            0.0,
            1024,
        )
        .unwrap();
        assert_ne!(base.fingerprint(), other_content.fingerprint());

        // The seed is excluded from the fingerprint by contract.
        let seeded = base.clone().with_seed(Some(7));
        assert_eq!(base.fingerprint(), seeded.fingerprint());
    }

    #[test]
    fn fingerprint_separates_message_boundaries() {
        // ("ab", "c") and ("a", "bc") must not collide.
        let a = ChatRequest::new(
            "m",
            vec![ChatMessage::user("ab"), ChatMessage::user("c")],
            0.0,
            10,
        )
        .unwrap();
        let b = ChatRequest::new(
            "m",
            vec![ChatMessage::user("a"), ChatMessage::user("bc")],
            0.0,
            10,
        )
        .unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn embedding_vector_rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert_eq!(EmbeddingVector::new(vec![0.0, 1.0]).unwrap().dim(), 2);
    }
}
