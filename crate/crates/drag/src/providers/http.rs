//! HTTP backends speaking a chat-completion-style JSON protocol.
//!
//! Request body: `{model, messages: [{role, content}], temperature,
//! max_tokens}`. Response: a `choices` array whose first element holds the
//! completion, plus a `usage` object with token counts. Rate limiting is
//! enforced here with a token bucket, so callers never sleep themselves.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::providers::{
    validate_embedding_inputs, ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider,
    EmbeddingVector, ProviderError, TokenUsage,
};

const MAX_RETRIES: u32 = 3;

#[derive(Debug)]
struct TokenBucket {
    capacity: f64,
    tokens: f64,
    refill_per_sec: f64,
    last_refill: Instant,
}

impl TokenBucket {
    fn new(requests_per_minute: u32) -> Self {
        let capacity = requests_per_minute.max(1) as f64;
        Self {
            capacity,
            tokens: capacity,
            refill_per_sec: capacity / 60.0,
            last_refill: Instant::now(),
        }
    }

    fn refill(&mut self) {
        let elapsed = self.last_refill.elapsed().as_secs_f64();
        self.tokens = (self.tokens + elapsed * self.refill_per_sec).min(self.capacity);
        self.last_refill = Instant::now();
    }

    /// Block until one request token is available, then take it.
    fn acquire(&mut self) {
        self.refill();
        if self.tokens < 1.0 {
            let deficit = 1.0 - self.tokens;
            std::thread::sleep(Duration::from_secs_f64(deficit / self.refill_per_sec));
            self.refill();
        }
        self.tokens = (self.tokens - 1.0).max(0.0);
    }
}

fn classify_status(status: u16, body: &str) -> ProviderError {
    match status {
        401 | 403 => ProviderError::Auth(format!("status {status}: {body}")),
        429 => ProviderError::Transport(format!("rate limited (429): {body}")),
        500..=599 => ProviderError::Transport(format!("status {status}: {body}")),
        _ => ProviderError::MalformedPayload(format!("status {status}: {body}")),
    }
}

fn is_retryable(err: &ProviderError) -> bool {
    matches!(err, ProviderError::Transport(_))
}

fn post_json(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    api_key: &str,
    body: &Value,
) -> Result<Value, ProviderError> {
    let mut last_err = ProviderError::Transport("no attempt made".into());
    for attempt in 0..=MAX_RETRIES {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(250 * (1 << (attempt - 1))));
        }
        let sent = client.post(endpoint).bearer_auth(api_key).json(body).send();
        match sent {
            Ok(response) => {
                let status = response.status().as_u16();
                let text = response
                    .text()
                    .map_err(|e| ProviderError::Transport(format!("reading body: {e}")))?;
                if (200..300).contains(&status) {
                    return serde_json::from_str(&text).map_err(|e| {
                        ProviderError::MalformedPayload(format!("response is not JSON: {e}"))
                    });
                }
                let err = classify_status(status, &text);
                if !is_retryable(&err) {
                    return Err(err);
                }
                last_err = err;
            }
            Err(e) => {
                last_err = ProviderError::Transport(e.to_string());
            }
        }
    }
    Err(last_err)
}

/// Chat-completion client for a hosted endpoint.
pub struct HttpChatProvider {
    provider_id: String,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
    bucket: Mutex<TokenBucket>,
}

impl HttpChatProvider {
    pub fn new(
        provider_id: impl Into<String>,
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        requests_per_minute: u32,
    ) -> Self {
        Self {
            provider_id: provider_id.into(),
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            client: reqwest::blocking::Client::new(),
            bucket: Mutex::new(TokenBucket::new(requests_per_minute)),
        }
    }
}

impl ChatProvider for HttpChatProvider {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.bucket.lock().expect("bucket lock").acquire();

        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }

        let payload = post_json(&self.client, &self.endpoint, &self.api_key, &body)?;
        let content = payload
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                ProviderError::MalformedPayload(
                    "missing choices[0].message.content in response".into(),
                )
            })?
            .to_string();
        let usage = TokenUsage {
            prompt_tokens: payload
                .pointer("/usage/prompt_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
            completion_tokens: payload
                .pointer("/usage/completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
        };
        Ok(ChatResponse {
            content,
            token_usage: usage,
            provider_id: self.provider_id.clone(),
        })
    }
}

/// Embedding client for a hosted endpoint: `{model, input: [texts]}` in,
/// `{data: [{embedding: [...]}]}` out.
pub struct HttpEmbeddingProvider {
    provider_id: String,
    endpoint: String,
    api_key: String,
    model_id: String,
    client: reqwest::blocking::Client,
    bucket: Mutex<TokenBucket>,
}

impl HttpEmbeddingProvider {
    pub fn new(
        provider_id: impl Into<String>,
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        model_id: impl Into<String>,
        requests_per_minute: u32,
    ) -> Self {
        Self {
            provider_id: provider_id.into(),
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            model_id: model_id.into(),
            client: reqwest::blocking::Client::new(),
            bucket: Mutex::new(TokenBucket::new(requests_per_minute)),
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        validate_embedding_inputs(texts)?;
        self.bucket.lock().expect("bucket lock").acquire();

        let body = json!({"model": self.model_id, "input": texts});
        let payload = post_json(&self.client, &self.endpoint, &self.api_key, &body)?;
        let data = payload
            .pointer("/data")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::MalformedPayload("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(ProviderError::MalformedPayload(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let mut vectors = Vec::with_capacity(data.len());
        for (i, item) in data.iter().enumerate() {
            let raw = item
                .pointer("/embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| {
                    ProviderError::MalformedPayload(format!("data[{i}] missing embedding"))
                })?;
            let values: Vec<f64> = raw.iter().filter_map(Value::as_f64).collect();
            if values.len() != raw.len() {
                return Err(ProviderError::MalformedPayload(format!(
                    "data[{i}] embedding has non-numeric entries"
                )));
            }
            vectors.push(EmbeddingVector::new(values)?);
        }
        let dim = vectors[0].dim();
        if let Some(bad) = vectors.iter().position(|v| v.dim() != dim) {
            return Err(ProviderError::DimensionMismatch(format!(
                "vector 0 has dim {dim} but vector {bad} has dim {}",
                vectors[bad].dim()
            )));
        }
        Ok(vectors)
    }
}
