//! Deterministic offline backends.
//!
//! [`ScriptedChatProvider`] replays canned completions keyed by request
//! fingerprint — a miss is a hard error, never a silent default. It backs the
//! exact-replay fixtures. [`ProceduralProvider`] synthesizes well-formed
//! responses for any pipeline request by hashing the prompt, which makes
//! desk-scale runs (hundreds of questions) possible with zero network access.
//! [`HashedEmbedder`] emits unit basis vectors by text hash, with optional
//! per-pair cosine overrides so tests can dictate exact similarity values.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicI64, AtomicUsize, Ordering};

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::providers::{
    prompts, validate_embedding_inputs, ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider,
    EmbeddingVector, ProviderError, TokenUsage,
};

/// Count whitespace-delimited tokens; used for scripted usage numbers.
pub(crate) fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Call counter with an optional budget. When the budget runs out every
/// further call fails with a retryable transport error, which is how tests
/// simulate provider exhaustion mid-run.
#[derive(Debug, Default)]
struct CallMeter {
    calls: AtomicUsize,
    budget: Option<AtomicI64>,
}

impl CallMeter {
    fn with_budget(budget: Option<usize>) -> Self {
        Self {
            calls: AtomicUsize::new(0),
            budget: budget.map(|b| AtomicI64::new(b as i64)),
        }
    }

    fn tick(&self, provider_id: &str) -> Result<(), ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(budget) = &self.budget {
            if budget.fetch_sub(1, Ordering::SeqCst) <= 0 {
                return Err(ProviderError::Transport(format!(
                    "{provider_id}: call budget exhausted"
                )));
            }
        }
        Ok(())
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// A canned completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureEntry {
    request: ChatRequest,
    response: ScriptedResponse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureFile {
    provider_id: String,
    entries: Vec<FixtureEntry>,
}

/// A total mapping from request fingerprint to canned response.
#[derive(Debug, Clone)]
pub struct ScriptedFixture {
    provider_id: String,
    // fingerprint -> (entry for serialization, response for lookup)
    entries: BTreeMap<String, FixtureEntry>,
}

impl ScriptedFixture {
    pub fn new(provider_id: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Register `content` as the completion for `request`. Token usage is
    /// filled with whitespace-token counts. Conflicting re-registration for
    /// the same fingerprint is an error; identical re-registration is a no-op.
    pub fn insert(&mut self, request: &ChatRequest, content: &str) -> Result<(), ProviderError> {
        let prompt_tokens: u64 = request
            .messages
            .iter()
            .map(|message| whitespace_tokens(&message.content))
            .sum();
        let response = ScriptedResponse {
            content: content.to_string(),
            prompt_tokens,
            completion_tokens: whitespace_tokens(content),
        };
        let fingerprint = request.fingerprint();
        if let Some(existing) = self.entries.get(&fingerprint) {
            if existing.response == response {
                return Ok(());
            }
            return Err(ProviderError::InvalidRequest(format!(
                "fixture already maps fingerprint {fingerprint} to a different response"
            )));
        }
        self.entries.insert(
            fingerprint,
            FixtureEntry {
                request: request.clone(),
                response,
            },
        );
        Ok(())
    }

    pub fn lookup(&self, fingerprint: &str) -> Option<&ScriptedResponse> {
        self.entries.get(fingerprint).map(|entry| &entry.response)
    }

    /// Canonical JSON encoding (sorted fingerprints), byte-stable across runs.
    pub fn to_json(&self) -> String {
        let file = FixtureFile {
            provider_id: self.provider_id.clone(),
            entries: self.entries.values().cloned().collect(),
        };
        let value = serde_json::to_value(&file).expect("fixture serializes");
        crate::store::canonical_json(&value)
    }

    pub fn from_json(json: &str) -> Result<Self, ProviderError> {
        let file: FixtureFile = serde_json::from_str(json)
            .map_err(|e| ProviderError::MalformedPayload(format!("fixture file: {e}")))?;
        let mut fixture = Self::new(file.provider_id);
        for entry in file.entries {
            let fingerprint = entry.request.fingerprint();
            if fixture.entries.contains_key(&fingerprint) {
                return Err(ProviderError::MalformedPayload(format!(
                    "fixture file contains duplicate fingerprint {fingerprint}"
                )));
            }
            fixture.entries.insert(fingerprint, entry);
        }
        Ok(fixture)
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let json = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::MalformedPayload(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        Self::from_json(&json)
    }
}

/// Chat provider that replays a [`ScriptedFixture`]. Byte-identical responses
/// for identical requests; a fingerprint miss is terminal.
pub struct ScriptedChatProvider {
    fixture: ScriptedFixture,
    meter: CallMeter,
}

impl ScriptedChatProvider {
    pub fn new(fixture: ScriptedFixture) -> Self {
        Self {
            fixture,
            meter: CallMeter::default(),
        }
    }

    /// Fail every call after the first `budget` with a transport error.
    pub fn with_budget(fixture: ScriptedFixture, budget: usize) -> Self {
        Self {
            fixture,
            meter: CallMeter::with_budget(Some(budget)),
        }
    }

    pub fn call_count(&self) -> usize {
        self.meter.calls()
    }
}

impl ChatProvider for ScriptedChatProvider {
    fn provider_id(&self) -> &str {
        self.fixture.provider_id()
    }

    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.meter.tick(self.fixture.provider_id())?;
        let fingerprint = request.fingerprint();
        let scripted =
            self.fixture
                .lookup(&fingerprint)
                .ok_or_else(|| ProviderError::FixtureMiss {
                    provider_id: self.fixture.provider_id().to_string(),
                    fingerprint: fingerprint.clone(),
                })?;
        Ok(ChatResponse {
            content: scripted.content.clone(),
            token_usage: TokenUsage {
                prompt_tokens: scripted.prompt_tokens,
                completion_tokens: scripted.completion_tokens,
            },
            provider_id: self.fixture.provider_id().to_string(),
        })
    }
}

fn stable_hash(text: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.finalize().into()
}

fn hash_u64(text: &str) -> u64 {
    let digest = stable_hash(text);
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

/// Embedder that maps each text to the unit basis vector at
/// `hash(text) mod dim`. Per-pair cosine overrides let a test dictate the
/// exact similarity between an anchor text (the query) and another text.
pub struct HashedEmbedder {
    dim: usize,
    // (anchor, text) -> cosine
    overrides: BTreeMap<(String, String), f64>,
    calls: AtomicUsize,
}

impl HashedEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "hashed embedder needs dim >= 2");
        Self {
            dim,
            overrides: BTreeMap::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Force `cos(embed(text), embed(anchor))` to equal `cosine` exactly.
    pub fn with_cosine(mut self, anchor: &str, text: &str, cosine: f64) -> Self {
        assert!((-1.0..=1.0).contains(&cosine), "cosine must be in [-1, 1]");
        self.overrides
            .insert((anchor.to_string(), text.to_string()), cosine);
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn basis_index(&self, text: &str) -> usize {
        (hash_u64(text) % self.dim as u64) as usize
    }

    fn vector_for(&self, text: &str) -> Vec<f64> {
        let mut values = vec![0.0; self.dim];
        let own = self
            .overrides
            .iter()
            .find(|((_, t), _)| t == text)
            .map(|((anchor, _), c)| (anchor.clone(), *c));
        match own {
            Some((anchor, cosine)) => {
                let anchor_idx = self.basis_index(&anchor);
                let mut text_idx = self.basis_index(text);
                if text_idx == anchor_idx {
                    text_idx = (text_idx + 1) % self.dim;
                }
                values[anchor_idx] = cosine;
                values[text_idx] = (1.0 - cosine * cosine).max(0.0).sqrt();
            }
            None => {
                values[self.basis_index(text)] = 1.0;
            }
        }
        values
    }
}

impl EmbeddingProvider for HashedEmbedder {
    fn provider_id(&self) -> &str {
        "hashed-embedder"
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        validate_embedding_inputs(texts)?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        texts
            .iter()
            .map(|text| EmbeddingVector::new(self.vector_for(text)))
            .collect()
    }
}

static GENERATE_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r"^Generate (\d+) evidences that pertain to answering the following question: (?s)(.*)$",
    )
    .unwrap()
});
static NUMBERED_LINE_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?m)^\d+\. (.*)$").unwrap());
static CHOICE_LINE_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?m)^([a-z])\. ").unwrap());

const WORDS: &[&str] = &[
    "oxidation",
    "membranes",
    "catalysts",
    "gradients",
    "isotopes",
    "polymers",
    "orbitals",
    "enzymes",
    "lattices",
    "vectors",
    "habitats",
    "currents",
    "minerals",
    "proteins",
    "circuits",
    "symmetry",
];

fn word_at(seed: &str, slot: u64) -> &'static str {
    WORDS[(hash_u64(&format!("{seed}#{slot}")) % WORDS.len() as u64) as usize]
}

/// Chat provider that synthesizes deterministic, well-formed responses for
/// every pipeline prompt shape by hashing the request. It serves desk-scale
/// offline runs where hand-scripted fixtures would be impractical; outputs
/// are structurally valid but carry no factual content.
pub struct ProceduralProvider {
    provider_id: String,
    meter: CallMeter,
}

impl ProceduralProvider {
    pub fn new() -> Self {
        Self {
            provider_id: "procedural".to_string(),
            meter: CallMeter::default(),
        }
    }

    pub fn with_budget(budget: usize) -> Self {
        Self {
            provider_id: "procedural".to_string(),
            meter: CallMeter::with_budget(Some(budget)),
        }
    }

    pub fn call_count(&self) -> usize {
        self.meter.calls()
    }

    fn synthesize_evidence(user: &str) -> Option<String> {
        let caps = GENERATE_RE.captures(user)?;
        let n: u32 = caps[1].parse().ok()?;
        let question = caps[2].trim();
        let snippet: String = question
            .split_whitespace()
            .take(6)
            .collect::<Vec<_>>()
            .join(" ")
            .trim_end_matches(['?', '.'])
            .to_string();
        let lines: Vec<String> = (1..=n)
            .map(|i| {
                let seed = format!("{question}|{i}");
                format!(
                    "{i}. Known {} interact with {} in questions about {snippet}.",
                    word_at(&seed, 0),
                    word_at(&seed, 1),
                )
            })
            .collect();
        Some(lines.join("\n"))
    }

    fn synthesize_ranking(user: &str) -> Option<String> {
        let items: Vec<String> = NUMBERED_LINE_RE
            .captures_iter(user)
            .map(|c| c[1].to_string())
            .collect();
        if items.is_empty() {
            return None;
        }
        let mut order: Vec<usize> = (1..=items.len()).collect();
        order.sort_by_key(|i| hash_u64(&format!("{user}|rank{i}")));
        Some(
            order
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        )
    }

    fn synthesize_triples(user: &str) -> String {
        let words: Vec<&str> = user
            .split_whitespace()
            .filter(|w| w.chars().any(char::is_alphanumeric))
            .collect();
        let head = words.first().copied().unwrap_or("subject");
        let tail = words.last().copied().unwrap_or("object");
        let mut lines = vec![format!("({head} | {tail} | {})", user.trim())];
        if words.len() >= 6 && hash_u64(user).is_multiple_of(2) {
            lines.push(format!("({} | {} | {})", words[1], words[2], user.trim()));
        }
        lines.join("\n")
    }

    fn synthesize_aggregation(user: &str) -> String {
        let parts: Vec<String> = NUMBERED_LINE_RE
            .captures_iter(user)
            .map(|c| c[1].trim().to_string())
            .collect();
        if parts.is_empty() {
            user.trim().to_string()
        } else {
            parts.join(" ")
        }
    }

    fn synthesize_injection(user: &str) -> Option<String> {
        let body = user.strip_prefix("Question: ")?;
        let (stem, details) = body.split_once("\n\nDetails:\n")?;
        let surfaces: Vec<&str> = details
            .lines()
            .filter_map(|line| line.strip_prefix("- "))
            .filter_map(|line| line.split_once(": ").map(|(_, surface)| surface))
            .collect();
        if surfaces.is_empty() {
            return None;
        }
        Some(format!(
            "{stem} For reference, {} may be relevant to this inquiry.",
            surfaces.join(", ")
        ))
    }

    fn synthesize_answer(user: &str) -> String {
        let labels: Vec<String> = CHOICE_LINE_RE
            .captures_iter(user)
            .map(|c| c[1].to_string())
            .collect();
        if labels.is_empty() {
            let seed = hash_u64(user);
            return format!("Answer: {} {}.", word_at(user, seed % 7), word_at(user, 3));
        }
        let pick = (hash_u64(user) % labels.len() as u64) as usize;
        format!("The answer is ({}).", labels[pick])
    }
}

impl Default for ProceduralProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatProvider for ProceduralProvider {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.meter.tick(&self.provider_id)?;
        let user = request.last_user_content().unwrap_or_default();
        let content = match request.system_content() {
            Some(prompts::EVIDENCE_SYSTEM_PROMPT) => Self::synthesize_evidence(user),
            Some(prompts::RANKING_SYSTEM_PROMPT) => Self::synthesize_ranking(user),
            Some(prompts::TRIPLE_SYSTEM_PROMPT) => Some(Self::synthesize_triples(user)),
            Some(prompts::AGGREGATION_SYSTEM_PROMPT) => Some(Self::synthesize_aggregation(user)),
            Some(prompts::INJECTION_SYSTEM_PROMPT) => Self::synthesize_injection(user),
            None => Some(Self::synthesize_answer(user)),
            Some(_) => None,
        };
        let content = content.ok_or_else(|| ProviderError::FixtureMiss {
            provider_id: self.provider_id.clone(),
            fingerprint: request.fingerprint(),
        })?;
        let prompt_tokens: u64 = request
            .messages
            .iter()
            .map(|message| whitespace_tokens(&message.content))
            .sum();
        Ok(ChatResponse {
            token_usage: TokenUsage {
                prompt_tokens,
                completion_tokens: whitespace_tokens(&content),
            },
            content,
            provider_id: self.provider_id.clone(),
        })
    }
}
