//! PII-augmented benchmark construction, redaction, and the relay flow.
//!
//! The privacy story: the user's real question may carry personal details.
//! A local model strips them before anything is sent to the cloud teacher;
//! the teacher retrieves evidence and graphs for the redacted question only;
//! the local student then answers the user's original question with the
//! returned context. A guard on the teacher handle enforces that no injected
//! surface ever leaves the local side, and a deterministic rule-based
//! detector measures what remains.

use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DragError, Result};
use crate::evidence::{build_evidence_set, Question};
use crate::graph::distill_triples;
use crate::providers::{
    prompts, ChatHandle, ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, ProviderError,
};
use crate::student::{answer, assemble_context, ContextMode, StudentAnswer};

/// Returned when a rule-based scrub removes the entire stem.
pub const REDACTION_EMPTY_FALLBACK: &str =
    "No question content remains after removing personal details.";

/// Kinds of personally identifiable information handled here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PiiKind {
    Name,
    Email,
    Address,
    Affiliation,
    Phone,
}

impl PiiKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PiiKind::Name => "name",
            PiiKind::Email => "email",
            PiiKind::Address => "address",
            PiiKind::Affiliation => "affiliation",
            PiiKind::Phone => "phone",
        }
    }

    pub const ALL: [PiiKind; 5] = [
        PiiKind::Name,
        PiiKind::Email,
        PiiKind::Address,
        PiiKind::Affiliation,
        PiiKind::Phone,
    ];
}

/// One occurrence of PII inside a host text, in character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiSpan {
    pub kind: PiiKind,
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

impl PiiSpan {
    /// Locate the first occurrence of `surface` in `host` by exact match.
    pub fn locate(kind: PiiKind, surface: &str, host: &str) -> Option<Self> {
        let byte_start = host.find(surface)?;
        let start = host[..byte_start].chars().count();
        let end = start + surface.chars().count();
        Some(Self {
            kind,
            surface: surface.to_string(),
            start,
            end,
        })
    }

    /// Check the invariant: the span equals the host slice it claims.
    pub fn matches_host(&self, host: &str) -> bool {
        let chars: Vec<char> = host.chars().collect();
        if self.start >= self.end || self.end > chars.len() {
            return false;
        }
        chars[self.start..self.end].iter().collect::<String>() == self.surface
    }
}

/// A benchmark record: the original question, its PII-augmented form, the
/// injected spans, and (after redaction/measurement) the redacted stem and
/// residual spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyRecord {
    pub original: Question,
    pub augmented_stem: String,
    pub injected: Vec<PiiSpan>,
    #[serde(default)]
    pub redacted_stem: String,
    #[serde(default)]
    pub residual: Vec<PiiSpan>,
}

impl PrivacyRecord {
    /// The benchmark-file row: {id, original_stem, augmented_stem, injected,
    /// choices, gold}.
    pub fn to_row(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.original.id,
            "original_stem": self.original.stem,
            "augmented_stem": self.augmented_stem,
            "injected": self.injected,
            "choices": self.original.choices,
            "gold": self.original.gold,
        })
    }

    pub fn from_row(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            original_stem: String,
            augmented_stem: String,
            injected: Vec<PiiSpan>,
            #[serde(default)]
            choices: Option<Vec<crate::evidence::Choice>>,
            #[serde(default)]
            gold: Option<String>,
        }
        let row: Row = serde_json::from_value(value.clone())?;
        let mut original = Question::new(row.id, row.original_stem);
        original.choices = row.choices;
        original.gold = row.gold;
        Ok(PrivacyRecord {
            original,
            augmented_stem: row.augmented_stem,
            injected: row.injected,
            redacted_stem: String::new(),
            residual: Vec::new(),
        })
    }
}

/// Parse a privacy-benchmark JSONL file back into records.
pub fn load_privacy_records(path: &std::path::Path) -> Result<Vec<PrivacyRecord>> {
    let content = std::fs::read_to_string(path)?;
    content
        .lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| {
            let value: serde_json::Value = serde_json::from_str(line)?;
            PrivacyRecord::from_row(&value)
        })
        .collect()
}

/// Pools of synthetic PII surfaces, shipped as a fixture file so the
/// benchmark is regenerable offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiiPools {
    pub names: Vec<String>,
    pub emails: Vec<String>,
    pub addresses: Vec<String>,
    pub affiliations: Vec<String>,
    pub phones: Vec<String>,
}

impl PiiPools {
    pub fn pool(&self, kind: PiiKind) -> &[String] {
        match kind {
            PiiKind::Name => &self.names,
            PiiKind::Email => &self.emails,
            PiiKind::Address => &self.addresses,
            PiiKind::Affiliation => &self.affiliations,
            PiiKind::Phone => &self.phones,
        }
    }

    /// Every surface in every pool.
    pub fn all_surfaces(&self) -> Vec<(PiiKind, String)> {
        PiiKind::ALL
            .iter()
            .flat_map(|&kind| {
                self.pool(kind)
                    .iter()
                    .map(move |surface| (kind, surface.clone()))
            })
            .collect()
    }
}

fn rng_for(seed: u64, question_id: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"\x1f");
    hasher.update(question_id.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha20Rng::from_seed(digest)
}

/// Deterministically draw 1–3 PII details for a question: which kinds and
/// which surfaces depend only on (seed, question id, pools).
pub fn draw_details(
    seed: u64,
    question_id: &str,
    pools: &PiiPools,
) -> Result<Vec<(PiiKind, String)>> {
    let mut rng = rng_for(seed, question_id);
    let count = rng.random_range(1..=3usize);
    let mut kinds = PiiKind::ALL.to_vec();
    kinds.shuffle(&mut rng);
    let mut details: Vec<(PiiKind, String)> = Vec::with_capacity(count);
    for kind in kinds.into_iter().take(count) {
        let pool = pools.pool(kind);
        if pool.is_empty() {
            continue;
        }
        let surface = pool[rng.random_range(0..pool.len())].clone();
        details.push((kind, surface));
    }
    if details.is_empty() {
        return Err(DragError::InvalidInput("PII pools are empty".into()));
    }
    Ok(details)
}

/// Ask the teacher to rewrite the stem so it embeds 1–3 synthetic PII items
/// drawn deterministically (seed, question id) from the pools. Injected spans
/// are located in the augmented stem by exact match; an unlocatable span
/// triggers one retry with a firmer instruction, then a hard error.
pub fn inject_pii(
    question: &Question,
    teacher: &ChatHandle,
    seed: u64,
    pools: &PiiPools,
) -> Result<PrivacyRecord> {
    if question.stem.trim().is_empty() {
        return Err(DragError::InvalidInput(format!(
            "question {} has an empty stem",
            question.id
        )));
    }
    let details = draw_details(seed, &question.id, pools)?;

    let labeled: Vec<(String, String)> = details
        .iter()
        .map(|(kind, surface)| (kind.as_str().to_string(), surface.clone()))
        .collect();

    let attempt = |messages: Vec<crate::providers::ChatMessage>| -> Result<(String, Vec<PiiSpan>)> {
        let response = teacher.complete(messages)?;
        let augmented = response.content.trim().to_string();
        let mut spans = Vec::with_capacity(details.len());
        for (kind, surface) in &details {
            match PiiSpan::locate(*kind, surface, &augmented) {
                Some(span) => spans.push(span),
                None => {
                    return Err(DragError::Parse {
                        stage: "inject",
                        message: format!(
                            "surface {surface:?} not present verbatim in augmented stem"
                        ),
                    });
                }
            }
        }
        Ok((augmented, spans))
    };

    let first = attempt(prompts::injection_messages(&question.stem, &labeled));
    let (augmented_stem, injected) = match first {
        Ok(found) => found,
        Err(DragError::Parse { .. }) => {
            let mut retry = prompts::injection_messages(&question.stem, &labeled);
            if let Some(last) = retry.last_mut() {
                last.content
                    .push_str("\n\nEvery detail must appear verbatim in the rewritten question.");
            }
            attempt(retry)?
        }
        Err(other) => return Err(other),
    };

    Ok(PrivacyRecord {
        original: question.clone(),
        augmented_stem,
        injected,
        redacted_stem: String::new(),
        residual: Vec::new(),
    })
}

static EMAIL_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}").unwrap());
static PHONE_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\+?\(?\d[\d\s().-]{5,}\d").unwrap());
static HONORIFIC_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"\b(?:Dr|Prof|Mr|Ms|Mrs)\.?\s+[A-Z][a-z]+(?:\s+[A-Z][a-z]+)?").unwrap()
});

fn byte_to_char(text: &str, byte_idx: usize) -> usize {
    text[..byte_idx].chars().count()
}

/// Deterministic rule-based detector: emails, phone-like digit runs
/// (≥ 7 digits with separators), honorific + capitalized-name bigrams, and
/// exact matches of the question's recorded injected surfaces. Addresses and
/// affiliations have no standalone rule; only their injected surfaces are
/// found.
pub fn detect_residual_pii(text: &str, injected: &[PiiSpan]) -> Vec<PiiSpan> {
    let mut spans: Vec<PiiSpan> = Vec::new();

    for m in EMAIL_RE.find_iter(text) {
        spans.push(PiiSpan {
            kind: PiiKind::Email,
            surface: m.as_str().to_string(),
            start: byte_to_char(text, m.start()),
            end: byte_to_char(text, m.end()),
        });
    }
    for m in PHONE_RE.find_iter(text) {
        let digits = m.as_str().chars().filter(char::is_ascii_digit).count();
        if digits >= 7 {
            spans.push(PiiSpan {
                kind: PiiKind::Phone,
                surface: m.as_str().to_string(),
                start: byte_to_char(text, m.start()),
                end: byte_to_char(text, m.end()),
            });
        }
    }
    for m in HONORIFIC_RE.find_iter(text) {
        spans.push(PiiSpan {
            kind: PiiKind::Name,
            surface: m.as_str().to_string(),
            start: byte_to_char(text, m.start()),
            end: byte_to_char(text, m.end()),
        });
    }
    for span in injected {
        let mut search_from = 0;
        while let Some(found) = text[search_from..].find(&span.surface) {
            let byte_start = search_from + found;
            spans.push(PiiSpan {
                kind: span.kind,
                surface: span.surface.clone(),
                start: byte_to_char(text, byte_start),
                end: byte_to_char(text, byte_start + span.surface.len()),
            });
            search_from = byte_start + span.surface.len().max(1);
        }
    }

    spans.sort_by_key(|s| (s.start, s.end));
    spans.dedup_by_key(|s| (s.start, s.end));
    spans
}

/// Remove every detected span from `text`, replacing it with a space, then
/// tidy whitespace and orphaned punctuation. Returns a non-empty generic
/// sentence when nothing but PII remains.
pub fn redact_rule_based(text: &str, injected: &[PiiSpan]) -> String {
    let spans = detect_residual_pii(text, injected);
    let chars: Vec<char> = text.chars().collect();
    let mut keep = vec![true; chars.len()];
    for span in &spans {
        for flag in keep
            .iter_mut()
            .take(span.end.min(chars.len()))
            .skip(span.start)
        {
            *flag = false;
        }
    }
    let mut scrubbed = String::with_capacity(text.len());
    let mut removed_here = false;
    for (c, keep) in chars.iter().zip(&keep) {
        if *keep {
            if removed_here {
                scrubbed.push(' ');
                removed_here = false;
            }
            scrubbed.push(*c);
        } else {
            removed_here = true;
        }
    }

    let mut tidied = scrubbed.split_whitespace().collect::<Vec<_>>().join(" ");
    for (from, to) in [
        (" ,", ","),
        (" .", "."),
        (" ?", "?"),
        (" ;", ";"),
        (" :", ":"),
        (" )", ")"),
        ("( ", "("),
    ] {
        while tidied.contains(from) {
            tidied = tidied.replace(from, to);
        }
    }
    let tidied = tidied
        .trim_matches(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | ':'))
        .to_string();
    if tidied.chars().any(char::is_alphanumeric) {
        tidied
    } else {
        REDACTION_EMPTY_FALLBACK.to_string()
    }
}

/// Ask the local redactor model to strip PII from the stem. An empty
/// completion (or a redactor failure) falls back to the rule-based scrub,
/// logged as degraded redaction.
pub fn redact_query(
    augmented_stem: &str,
    redactor: &ChatHandle,
    injected: &[PiiSpan],
) -> Result<String> {
    if augmented_stem.trim().is_empty() {
        return Err(DragError::InvalidInput("stem must be non-empty".into()));
    }
    match redactor.complete(prompts::redaction_messages(augmented_stem)) {
        Ok(response) => {
            let redacted = response.content.trim().to_string();
            if redacted.is_empty() {
                log::warn!("redactor returned empty completion; using rule-based scrub");
                Ok(redact_rule_based(augmented_stem, injected))
            } else {
                Ok(redacted)
            }
        }
        Err(e) => {
            log::warn!("redactor failed ({e}); using rule-based scrub");
            Ok(redact_rule_based(augmented_stem, injected))
        }
    }
}

/// Overall reduction: 1 − (Σ residual)/(Σ injected).
pub fn pii_reduction_rate(records: &[PrivacyRecord]) -> Result<f64> {
    let injected: usize = records.iter().map(|r| r.injected.len()).sum();
    if injected == 0 {
        return Err(DragError::InvalidInput(
            "reduction rate undefined with zero injected spans".into(),
        ));
    }
    let residual: usize = records.iter().map(|r| r.residual.len()).sum();
    Ok(1.0 - residual as f64 / injected as f64)
}

/// Archive of payloads actually transmitted through a guarded handle.
#[derive(Debug, Default)]
pub struct TransmissionLog {
    payloads: Mutex<Vec<String>>,
}

impl TransmissionLog {
    pub fn record(&self, payload: &str) {
        self.payloads
            .lock()
            .expect("transmission log lock")
            .push(payload.to_string());
    }

    pub fn payloads(&self) -> Vec<String> {
        self.payloads.lock().expect("transmission log lock").clone()
    }

    /// Count payloads containing any of the given surfaces.
    pub fn count_containing(&self, surfaces: &[String]) -> usize {
        self.payloads()
            .iter()
            .filter(|payload| surfaces.iter().any(|s| payload.contains(s)))
            .count()
    }
}

/// Chat provider wrapper that refuses to transmit any payload containing a
/// forbidden surface, and records everything it does transmit. Enforced at
/// the provider boundary, so the assertion holds under any parallelism.
pub struct GuardedChatProvider {
    inner: Arc<dyn ChatProvider>,
    forbidden: Vec<String>,
    log: Arc<TransmissionLog>,
}

impl GuardedChatProvider {
    pub fn new(
        inner: Arc<dyn ChatProvider>,
        forbidden: Vec<String>,
        log: Arc<TransmissionLog>,
    ) -> Self {
        Self {
            inner,
            forbidden,
            log,
        }
    }
}

impl ChatProvider for GuardedChatProvider {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn chat_complete(
        &self,
        request: &ChatRequest,
    ) -> std::result::Result<ChatResponse, ProviderError> {
        for message in &request.messages {
            if let Some(surface) = self
                .forbidden
                .iter()
                .find(|surface| message.content.contains(surface.as_str()))
            {
                return Err(ProviderError::PayloadBlocked(format!(
                    "injected surface {surface:?} found in outbound payload"
                )));
            }
        }
        for message in &request.messages {
            self.log.record(&message.content);
        }
        self.inner.chat_complete(request)
    }
}

/// How the relay strips PII before contacting the teacher.
pub enum Redactor {
    /// A local model rewrites the question (rule-based scrub on failure).
    Chat(ChatHandle),
    /// The deterministic rule-based scrub alone.
    RuleBased,
}

impl Redactor {
    pub fn redact(&self, augmented_stem: &str, injected: &[PiiSpan]) -> Result<String> {
        match self {
            Redactor::Chat(handle) => redact_query(augmented_stem, handle, injected),
            Redactor::RuleBased => Ok(redact_rule_based(augmented_stem, injected)),
        }
    }
}

/// Pipeline settings for one relay run.
#[derive(Debug, Clone, Copy)]
pub struct RelayConfig {
    pub n: u32,
    pub k_evidence: u32,
    pub k_graph: u32,
    pub mode: ContextMode,
}

/// Everything a relay run produces: the answer, the stem that actually left
/// the local side, and the transmission instrument.
pub struct RelayOutcome {
    pub answer: StudentAnswer,
    pub redacted_stem: String,
    pub transmissions: Arc<TransmissionLog>,
}

/// The privacy-preserving flow for one augmented question.
///
/// Redact locally, run the evidence and graph pipelines on the redacted stem
/// through a guarded teacher handle, then assemble the context with the
/// original augmented stem (the private text never leaves the local side)
/// and query the local student.
pub fn relay_answer(
    record: &PrivacyRecord,
    redactor: &Redactor,
    teacher: &ChatHandle,
    student: &ChatHandle,
    embedder: &Arc<dyn EmbeddingProvider>,
    config: &RelayConfig,
) -> Result<RelayOutcome> {
    let redacted_stem = redactor.redact(&record.augmented_stem, &record.injected)?;

    let log = Arc::new(TransmissionLog::default());
    let forbidden: Vec<String> = record
        .injected
        .iter()
        .map(|span| span.surface.clone())
        .collect();
    let guarded_teacher = teacher.with_provider(Arc::new(GuardedChatProvider::new(
        teacher.provider().clone(),
        forbidden,
        log.clone(),
    )));

    let cloud_question = Question::new(record.original.id.clone(), redacted_stem.clone());
    let evidence_set = build_evidence_set(
        &cloud_question,
        config.n,
        config.k_evidence,
        &guarded_teacher,
        embedder,
    )
    .map_err(block_to_violation)?;

    let triples = if config.mode.uses_graph() {
        distill_triples(
            &cloud_question,
            &evidence_set,
            config.k_graph,
            &guarded_teacher,
            embedder,
        )
        .map_err(block_to_violation)?
    } else {
        Vec::new()
    };

    // The local student sees the user's real (augmented) question.
    let local_question = Question {
        id: record.original.id.clone(),
        stem: record.augmented_stem.clone(),
        choices: record.original.choices.clone(),
        gold: None,
        subject: record.original.subject.clone(),
    };
    let mode = match config.mode {
        ContextMode::Combined if triples.is_empty() => {
            log::warn!(
                "question {}: no triples extracted, degrading combined to evidence-only",
                record.original.id
            );
            ContextMode::EvidenceOnly
        }
        ContextMode::GraphOnly if triples.is_empty() => {
            return Err(DragError::InvalidInput(format!(
                "question {}: graph mode requires extracted triples",
                record.original.id
            )));
        }
        mode => mode,
    };
    let context = match mode {
        ContextMode::EvidenceOnly => {
            assemble_context(&local_question, Some(&evidence_set), None, mode)?
        }
        ContextMode::GraphOnly => assemble_context(&local_question, None, Some(&triples), mode)?,
        ContextMode::Combined => {
            assemble_context(&local_question, Some(&evidence_set), Some(&triples), mode)?
        }
    };
    let student_answer = answer(&context, student)?;
    Ok(RelayOutcome {
        answer: student_answer,
        redacted_stem,
        transmissions: log,
    })
}

fn block_to_violation(err: DragError) -> DragError {
    match err {
        DragError::Provider(ProviderError::PayloadBlocked(message)) => {
            log::error!("privacy violation prevented: {message}");
            DragError::PrivacyViolation { surface: message }
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::ProceduralProvider;

    fn pools() -> PiiPools {
        PiiPools {
            names: vec!["Dr. Amelia Thompson".into(), "Prof. Marcus Hale".into()],
            emails: vec!["athompson93@biochemjournal.fake".into()],
            addresses: vec!["123 Chemistry Lane, Springfield".into()],
            affiliations: vec!["Crestwood University".into()],
            phones: vec!["+1 (555) 014-2387".into()],
        }
    }

    #[test]
    fn detector_finds_emails() {
        let spans = detect_residual_pii("contact athompson93@biochemjournal.fake", &[]);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].kind, PiiKind::Email);
        assert_eq!(spans[0].surface, "athompson93@biochemjournal.fake");
    }

    #[test]
    fn detector_finds_nothing_in_clean_text() {
        let spans = detect_residual_pii("the mitochondria is the powerhouse", &[]);
        assert!(spans.is_empty());
    }

    #[test]
    fn detector_finds_honorific_names() {
        let spans = detect_residual_pii("Dr. Emily Greene explored this topic.", &[]);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].kind, PiiKind::Name);
        assert_eq!(spans[0].surface, "Dr. Emily Greene");
    }

    #[test]
    fn detector_finds_phone_runs_and_injected_surfaces() {
        let injected = vec![PiiSpan {
            kind: PiiKind::Affiliation,
            surface: "Crestwood University".into(),
            start: 0,
            end: 0,
        }];
        let text = "Call +1 (555) 014-2387 or visit Crestwood University.";
        let spans = detect_residual_pii(text, &injected);
        let kinds: Vec<PiiKind> = spans.iter().map(|s| s.kind).collect();
        assert!(kinds.contains(&PiiKind::Phone));
        assert!(kinds.contains(&PiiKind::Affiliation));
        for span in &spans {
            assert!(span.matches_host(text), "span {span:?} must equal slice");
        }
    }

    #[test]
    fn short_digit_runs_are_not_phones() {
        assert!(detect_residual_pii("room 123 on floor 45", &[]).is_empty());
    }

    #[test]
    fn rule_based_scrub_removes_all_detectable_spans() {
        let text =
            "Which amino acids? Dr. Amelia Thompson (athompson93@biochemjournal.fake) asked.";
        let scrubbed = redact_rule_based(text, &[]);
        assert!(detect_residual_pii(&scrubbed, &[]).is_empty(), "{scrubbed}");
        assert!(scrubbed.contains("Which amino acids?"));
    }

    #[test]
    fn scrub_of_pure_pii_returns_generic_sentence() {
        let injected = vec![PiiSpan {
            kind: PiiKind::Email,
            surface: "x@y.z".into(),
            start: 0,
            end: 0,
        }];
        let scrubbed = redact_rule_based("x@y.z", &injected);
        assert_eq!(scrubbed, REDACTION_EMPTY_FALLBACK);
        assert!(detect_residual_pii(&scrubbed, &injected).is_empty());
    }

    #[test]
    fn reduction_rate_matches_reference_arithmetic() {
        // 15,090 injected, 649 residual -> 0.957 overall reduction.
        let make_span = |i: usize| PiiSpan {
            kind: PiiKind::Name,
            surface: format!("surface {i}"),
            start: 0,
            end: 0,
        };
        let mut records = Vec::new();
        let mut residual_left = 649usize;
        for chunk in 0..1509 {
            let injected: Vec<PiiSpan> = (0..10).map(|i| make_span(chunk * 10 + i)).collect();
            let residual_here = residual_left.min(if chunk < 649 { 1 } else { 0 });
            residual_left -= residual_here;
            let residual: Vec<PiiSpan> = injected[..residual_here].to_vec();
            records.push(PrivacyRecord {
                original: Question::new(format!("q{chunk}"), "stem"),
                augmented_stem: "stem".into(),
                injected,
                redacted_stem: String::new(),
                residual,
            });
        }
        let rate = pii_reduction_rate(&records).unwrap();
        assert!((rate - 0.957).abs() < 5e-4, "rate={rate}");

        let all_clean: Vec<PrivacyRecord> = records
            .iter()
            .map(|r| PrivacyRecord {
                residual: vec![],
                ..r.clone()
            })
            .collect();
        assert_eq!(pii_reduction_rate(&all_clean).unwrap(), 1.0);

        let nothing_removed: Vec<PrivacyRecord> = records
            .iter()
            .map(|r| PrivacyRecord {
                residual: r.injected.clone(),
                ..r.clone()
            })
            .collect();
        assert_eq!(pii_reduction_rate(&nothing_removed).unwrap(), 0.0);
    }

    #[test]
    fn reduction_rate_requires_injected_spans() {
        let record = PrivacyRecord {
            original: Question::new("q", "stem"),
            augmented_stem: "stem".into(),
            injected: vec![],
            redacted_stem: String::new(),
            residual: vec![],
        };
        assert!(pii_reduction_rate(&[record]).is_err());
    }

    #[test]
    fn injection_is_deterministic_per_seed_and_question() {
        let provider = Arc::new(ProceduralProvider::new());
        let teacher = ChatHandle::new(provider, "teacher-model");
        let question = Question::new("q-7", "What is the boiling point of water?");
        let pools = pools();
        let a = inject_pii(&question, &teacher, 42, &pools).unwrap();
        let b = inject_pii(&question, &teacher, 42, &pools).unwrap();
        assert_eq!(a, b);
        assert!(!a.injected.is_empty() && a.injected.len() <= 3);
        for span in &a.injected {
            assert!(span.matches_host(&a.augmented_stem));
        }
        let c = inject_pii(&question, &teacher, 43, &pools).unwrap();
        assert!(c.injected != a.injected || c.augmented_stem != a.augmented_stem);
    }

    #[test]
    fn guard_blocks_payloads_with_forbidden_surfaces() {
        let log = Arc::new(TransmissionLog::default());
        let guard = GuardedChatProvider::new(
            Arc::new(ProceduralProvider::new()),
            vec!["secret@leak.com".into()],
            log.clone(),
        );
        let clean = ChatRequest::new(
            "m",
            prompts::evidence_messages("What is water?", 2),
            0.0,
            256,
        )
        .unwrap();
        assert!(guard.chat_complete(&clean).is_ok());

        let dirty = ChatRequest::new(
            "m",
            prompts::evidence_messages("Email secret@leak.com about water?", 2),
            0.0,
            256,
        )
        .unwrap();
        let err = guard.chat_complete(&dirty).unwrap_err();
        assert!(matches!(err, ProviderError::PayloadBlocked(_)));
        assert_eq!(log.count_containing(&["secret@leak.com".into()]), 0);
        assert!(!log.payloads().is_empty());
    }

    #[test]
    fn relay_blocks_when_redaction_leaves_a_surface() {
        // A redactor that returns the stem unchanged leaks the surface.
        struct EchoRedactor;
        impl ChatProvider for EchoRedactor {
            fn provider_id(&self) -> &str {
                "echo"
            }
            fn chat_complete(
                &self,
                request: &ChatRequest,
            ) -> std::result::Result<ChatResponse, ProviderError> {
                Ok(ChatResponse {
                    content: request.last_user_content().unwrap_or_default().to_string(),
                    token_usage: Default::default(),
                    provider_id: "echo".into(),
                })
            }
        }

        let question = Question::new("q", "What is water?").with_choices(vec![
            crate::evidence::Choice::new('a', "H2O"),
            crate::evidence::Choice::new('b', "CO2"),
        ]);
        let augmented = "What is water? Ask leaky@surface.org for details.";
        let record = PrivacyRecord {
            original: question,
            augmented_stem: augmented.into(),
            injected: vec![
                PiiSpan::locate(PiiKind::Email, "leaky@surface.org", augmented).unwrap(),
            ],
            redacted_stem: String::new(),
            residual: vec![],
        };
        let teacher = ChatHandle::new(Arc::new(ProceduralProvider::new()), "teacher");
        let student = ChatHandle::new(Arc::new(ProceduralProvider::new()), "student");
        let embedder: Arc<dyn EmbeddingProvider> =
            Arc::new(crate::providers::mock::HashedEmbedder::new(32));
        let config = RelayConfig {
            n: 3,
            k_evidence: 2,
            k_graph: 2,
            mode: ContextMode::EvidenceOnly,
        };
        let redactor = Redactor::Chat(ChatHandle::new(Arc::new(EchoRedactor), "redactor"));
        match relay_answer(&record, &redactor, &teacher, &student, &embedder, &config) {
            Err(DragError::PrivacyViolation { .. }) => {}
            Err(other) => panic!("expected PrivacyViolation, got {other}"),
            Ok(_) => panic!("cloud call must be blocked"),
        }
    }

    #[test]
    fn relay_with_rule_based_redactor_keeps_surfaces_off_the_wire() {
        let question = Question::new("q", "Which acids are ketogenic?").with_choices(vec![
            crate::evidence::Choice::new('a', "Leucine and lysine"),
            crate::evidence::Choice::new('b', "Alanine and glycine"),
        ]);
        let augmented =
            "Which acids are ketogenic? Dr. Amelia Thompson (athompson93@biochemjournal.fake) wrote about this.";
        let injected = vec![
            PiiSpan::locate(PiiKind::Name, "Dr. Amelia Thompson", augmented).unwrap(),
            PiiSpan::locate(PiiKind::Email, "athompson93@biochemjournal.fake", augmented).unwrap(),
        ];
        let record = PrivacyRecord {
            original: question,
            augmented_stem: augmented.into(),
            injected,
            redacted_stem: String::new(),
            residual: vec![],
        };
        let teacher = ChatHandle::new(Arc::new(ProceduralProvider::new()), "teacher");
        let student = ChatHandle::new(Arc::new(ProceduralProvider::new()), "student");
        let embedder: Arc<dyn EmbeddingProvider> =
            Arc::new(crate::providers::mock::HashedEmbedder::new(32));
        let config = RelayConfig {
            n: 4,
            k_evidence: 3,
            k_graph: 2,
            mode: ContextMode::Combined,
        };
        let outcome = relay_answer(
            &record,
            &Redactor::RuleBased,
            &teacher,
            &student,
            &embedder,
            &config,
        )
        .unwrap();
        let surfaces: Vec<String> = record.injected.iter().map(|s| s.surface.clone()).collect();
        assert_eq!(outcome.transmissions.count_containing(&surfaces), 0);
        assert!(!outcome.transmissions.payloads().is_empty());
        // The local student, by contrast, saw the original augmented stem.
        assert!(outcome.answer.raw.starts_with("The answer is"));
    }
}
