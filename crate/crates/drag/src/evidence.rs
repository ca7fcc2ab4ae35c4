//! Evidence generation, scoring, fusion, and top-K filtering.
//!
//! The teacher model acts as the retriever: it generates N candidate evidence
//! statements for a question. Each candidate is scored two ways — cosine
//! similarity between its embedding and the question embedding, and a
//! teacher-assigned relevance rank mapped onto (0, 1] — and the two scores are
//! fused by an equally weighted sum. The lowest-scoring candidates are
//! discarded, keeping the top K.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::Arc;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{DragError, Result};
use crate::providers::{prompts, ChatHandle, EmbeddingProvider, EmbeddingVector};
use crate::store::canonical_json;

/// One answer option of a multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: char,
    pub text: String,
}

impl Choice {
    pub fn new(label: char, text: impl Into<String>) -> Self {
        Self {
            label,
            text: text.into(),
        }
    }
}

/// A benchmark item flowing through every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub stem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Choice>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl Question {
    pub fn new(id: impl Into<String>, stem: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            stem: stem.into(),
            choices: None,
            gold: None,
            subject: None,
        }
    }

    pub fn with_choices(mut self, choices: Vec<Choice>) -> Self {
        self.choices = Some(choices);
        self
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold = Some(gold.into());
        self
    }

    pub fn is_multiple_choice(&self) -> bool {
        self.choices.as_deref().is_some_and(|c| !c.is_empty())
    }

    /// Check the structural invariants: non-empty stem, and when choices are
    /// present their labels are distinct and ordered a, b, c, …
    pub fn validate(&self) -> Result<()> {
        if self.stem.trim().is_empty() {
            return Err(DragError::InvalidInput(format!(
                "question {} has an empty stem",
                self.id
            )));
        }
        if let Some(choices) = &self.choices {
            for (i, choice) in choices.iter().enumerate() {
                let expected = (b'a' + i as u8) as char;
                if choice.label != expected {
                    return Err(DragError::InvalidInput(format!(
                        "question {}: choice {} has label {:?}, expected {:?}",
                        self.id, i, choice.label, expected
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A teacher-generated factual snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// 0-based generation order.
    pub index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

impl Evidence {
    pub fn new(index: usize, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DragError::InvalidInput(
                "evidence text must be non-empty".into(),
            ));
        }
        Ok(Self {
            index,
            text: text.trim().to_string(),
            embedding: None,
        })
    }
}

/// Evidence with both scores and their fusion attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEvidence {
    pub evidence: Evidence,
    /// Cosine similarity against the question embedding, in [-1, 1].
    pub sim_score: f64,
    /// Teacher-assigned rank in [1, n]; 1 is most relevant.
    pub llm_rank: u32,
    /// (n - rank + 1) / n, in (0, 1].
    pub llm_rank_score: f64,
    /// sim_score + llm_rank_score, in (-1, 2].
    pub fused_score: f64,
}

impl RankedEvidence {
    pub fn new(evidence: Evidence, sim_score: f64, llm_rank: u32, n: u32) -> Self {
        let fused_score = fuse_scores(sim_score, llm_rank, n);
        Self {
            evidence,
            sim_score,
            llm_rank,
            llm_rank_score: rank_score(llm_rank, n),
            fused_score,
        }
    }
}

/// How the teacher's ranking output was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingQuality {
    /// The completion was already a clean permutation.
    Clean,
    /// Duplicates, gaps, or noise were repaired deterministically.
    Repaired,
    /// No integers parsed at all; identity permutation substituted.
    Fallback,
}

/// A teacher ranking over a list of evidences: `ranks[i]` is the rank
/// assigned to evidence `i` (1 = most relevant).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmRanking {
    pub ranks: Vec<u32>,
    pub quality: RankingQuality,
}

/// The scored evidence pool for one question, with the retained top-K order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceSet {
    pub question_id: String,
    /// N as requested from the teacher (the parse may return fewer).
    pub n_requested: u32,
    pub k: u32,
    pub items: Vec<RankedEvidence>,
    /// Evidence indices of the retained subset, best first.
    pub filtered: Vec<usize>,
    pub ranking_quality: RankingQuality,
}

static ENUMERATION_MARKER: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^\s*(?:\d+[.)]\s*|[-•*]\s*)").unwrap());
static INTEGER_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\d+").unwrap());

/// Split a completion into evidence texts: line-delimited, leading
/// enumeration markers ("1.", "-", "•") stripped, empty lines dropped, at
/// most `n` kept (first wins when the teacher over-generates).
pub fn parse_evidence_lines(completion: &str, n: u32) -> Vec<String> {
    completion
        .lines()
        .map(|line| ENUMERATION_MARKER.replace(line, "").trim().to_string())
        .filter(|line| !line.is_empty())
        .take(n as usize)
        .collect()
}

/// Ask the teacher for up to `n` evidences about `question`.
pub fn generate_evidence(
    question: &Question,
    n: u32,
    teacher: &ChatHandle,
) -> Result<Vec<Evidence>> {
    if n == 0 {
        return Err(DragError::InvalidInput("n must be at least 1".into()));
    }
    let response = teacher.complete(prompts::evidence_messages(&question.stem, n))?;
    let texts = parse_evidence_lines(&response.content, n);
    if texts.is_empty() {
        return Err(DragError::Parse {
            stage: "evidence",
            message: format!(
                "teacher returned zero parseable evidence lines for question {}",
                question.id
            ),
        });
    }
    texts
        .into_iter()
        .enumerate()
        .map(|(index, text)| Evidence::new(index, text))
        .collect()
}

/// Cosine similarity between an evidence embedding and the query embedding,
/// clamped to [-1, 1] against rounding.
pub fn score_semantic(evidence: &EmbeddingVector, query: &EmbeddingVector) -> Result<f64> {
    if evidence.dim() != query.dim() {
        return Err(DragError::DegenerateEmbedding(format!(
            "dimension mismatch: {} vs {}",
            evidence.dim(),
            query.dim()
        )));
    }
    let (en, qn) = (evidence.norm(), query.norm());
    if en == 0.0 || qn == 0.0 {
        return Err(DragError::DegenerateEmbedding("zero-norm embedding".into()));
    }
    let dot: f64 = evidence
        .values()
        .iter()
        .zip(query.values())
        .map(|(a, b)| a * b)
        .sum();
    Ok((dot / (en * qn)).clamp(-1.0, 1.0))
}

/// Repair a parsed rank sequence into a valid permutation of 1..=n.
///
/// The completion is read as the evidence numbers from most to least
/// relevant. Out-of-range values are dropped, a duplicate vacates its
/// position, short output leaves trailing positions vacant, and vacant
/// positions are then filled with the missing numbers in original
/// (ascending) order.
fn repair_permutation(values: &[u64], n: usize) -> Vec<u32> {
    let mut slots: Vec<Option<u32>> = Vec::with_capacity(n);
    let mut seen = BTreeSet::new();
    for &value in values {
        if slots.len() == n {
            break;
        }
        if (1..=n as u64).contains(&value) {
            let v = value as u32;
            if seen.insert(v) {
                slots.push(Some(v));
            } else {
                slots.push(None);
            }
        }
    }
    while slots.len() < n {
        slots.push(None);
    }
    let mut missing = (1..=n as u32).filter(|v| !seen.contains(v));
    slots
        .into_iter()
        .map(|slot| slot.unwrap_or_else(|| missing.next().expect("one missing per vacancy")))
        .collect()
}

/// Parse a ranking completion for `n` evidences into per-evidence ranks.
pub fn parse_ranking(completion: &str, n: usize) -> LlmRanking {
    let values: Vec<u64> = INTEGER_RE
        .find_iter(completion)
        .filter_map(|m| m.as_str().parse().ok())
        .collect();
    let permutation = repair_permutation(&values, n);
    let quality = if values.is_empty() {
        RankingQuality::Fallback
    } else if values.len() == n
        && values
            .iter()
            .zip(&permutation)
            .all(|(v, p)| *v == *p as u64)
    {
        RankingQuality::Clean
    } else {
        RankingQuality::Repaired
    };
    // permutation[j] names the evidence placed at rank j+1; invert it.
    let mut ranks = vec![0u32; n];
    for (position, evidence_number) in permutation.iter().enumerate() {
        ranks[(*evidence_number - 1) as usize] = position as u32 + 1;
    }
    LlmRanking { ranks, quality }
}

/// Rank arbitrary texts against a question stem. Shared by evidence ranking
/// and graph-relationship ranking, which reuses this machinery exactly.
pub(crate) fn rank_texts(
    question_id: &str,
    stem: &str,
    texts: &[&str],
    teacher: &ChatHandle,
) -> Result<LlmRanking> {
    if texts.is_empty() {
        return Err(DragError::InvalidInput("cannot rank an empty list".into()));
    }
    if texts.len() == 1 {
        return Ok(LlmRanking {
            ranks: vec![1],
            quality: RankingQuality::Clean,
        });
    }
    let response = teacher.complete(prompts::ranking_messages(stem, texts))?;
    let ranking = parse_ranking(&response.content, texts.len());
    match ranking.quality {
        RankingQuality::Clean => {}
        RankingQuality::Repaired => log::warn!(
            "question {question_id}: malformed ranking {:?} repaired",
            response.content
        ),
        RankingQuality::Fallback => log::warn!(
            "question {question_id}: unparseable ranking {:?}, using identity permutation",
            response.content
        ),
    }
    Ok(ranking)
}

/// Ask the teacher to rank the evidences by relevance to the question.
///
/// A single evidence is rank [1] without any teacher call. A completion with
/// no parseable integers falls back to the identity permutation, flagged as
/// [`RankingQuality::Fallback`] and logged — never silently.
pub fn score_llm_rank(
    question: &Question,
    evidences: &[Evidence],
    teacher: &ChatHandle,
) -> Result<LlmRanking> {
    let texts: Vec<&str> = evidences.iter().map(|e| e.text.as_str()).collect();
    rank_texts(&question.id, &question.stem, &texts, teacher)
}

fn rank_score(llm_rank: u32, n: u32) -> f64 {
    assert!(
        (1..=n).contains(&llm_rank),
        "rank {llm_rank} outside 1..={n}"
    );
    f64::from(n - llm_rank + 1) / f64::from(n)
}

/// Equally weighted fusion of the cosine score and the normalized rank:
/// `sim + (n - rank + 1) / n`.
pub fn fuse_scores(sim_score: f64, llm_rank: u32, n: u32) -> f64 {
    sim_score + rank_score(llm_rank, n)
}

/// Comparator shared by evidence and triple filtering: descending fused
/// score, ties broken by ascending text (code-point order), then ascending
/// index.
pub(crate) fn fused_cmp(a: (f64, &str, usize), b: (f64, &str, usize)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.cmp(b.1))
        .then_with(|| a.2.cmp(&b.2))
}

/// Retain the top `min(k, |items|)` evidences by descending fused score.
/// Returns evidence indices, best first.
pub fn filter_evidence(items: &[RankedEvidence], k: u32) -> Result<Vec<usize>> {
    if items.is_empty() {
        return Err(DragError::InvalidInput(
            "cannot filter an empty evidence list".into(),
        ));
    }
    if k == 0 {
        return Err(DragError::InvalidInput("k must be at least 1".into()));
    }
    let mut order: Vec<&RankedEvidence> = items.iter().collect();
    order.sort_by(|a, b| {
        fused_cmp(
            (a.fused_score, a.evidence.text.as_str(), a.evidence.index),
            (b.fused_score, b.evidence.text.as_str(), b.evidence.index),
        )
    });
    Ok(order
        .into_iter()
        .take(k as usize)
        .map(|item| item.evidence.index)
        .collect())
}

/// Run generation → embedding → ranking → fusion → filtering for one
/// question. Pure given provider responses, so any scheduling across
/// questions yields identical sets.
pub fn build_evidence_set(
    question: &Question,
    n: u32,
    k: u32,
    teacher: &ChatHandle,
    embedder: &Arc<dyn EmbeddingProvider>,
) -> Result<EvidenceSet> {
    if k == 0 || n == 0 || k > n {
        return Err(DragError::InvalidInput(format!(
            "require 1 <= k <= n, got k={k} n={n}"
        )));
    }
    let mut evidences = generate_evidence(question, n, teacher)?;

    // One order-preserving batch: question stem first, then each evidence.
    let mut batch = Vec::with_capacity(evidences.len() + 1);
    batch.push(question.stem.clone());
    batch.extend(evidences.iter().map(|e| e.text.clone()));
    let vectors = embedder.embed_texts(&batch)?;
    if vectors.len() != batch.len() {
        return Err(DragError::DegenerateEmbedding(format!(
            "asked for {} embeddings, got {}",
            batch.len(),
            vectors.len()
        )));
    }
    let query_vector = &vectors[0];

    let ranking = score_llm_rank(question, &evidences, teacher)?;
    let m = evidences.len() as u32;
    let mut items = Vec::with_capacity(evidences.len());
    for (i, evidence) in evidences.iter_mut().enumerate() {
        let sim = score_semantic(&vectors[i + 1], query_vector)?;
        evidence.embedding = Some(vectors[i + 1].clone());
        items.push(RankedEvidence::new(
            evidence.clone(),
            sim,
            ranking.ranks[i],
            m,
        ));
    }
    let filtered = filter_evidence(&items, k)?;
    Ok(EvidenceSet {
        question_id: question.id.clone(),
        n_requested: n,
        k,
        items,
        filtered,
        ranking_quality: ranking.quality,
    })
}

impl EvidenceSet {
    /// Texts of the retained evidences, best first.
    pub fn filtered_texts(&self) -> Vec<&str> {
        self.filtered
            .iter()
            .map(|&index| {
                self.items
                    .iter()
                    .find(|item| item.evidence.index == index)
                    .expect("filtered indices reference items")
                    .evidence
                    .text
                    .as_str()
            })
            .collect()
    }

    /// Retained evidences, best first.
    pub fn filtered_evidences(&self) -> Vec<&Evidence> {
        self.filtered
            .iter()
            .map(|&index| {
                &self
                    .items
                    .iter()
                    .find(|item| item.evidence.index == index)
                    .expect("filtered indices reference items")
                    .evidence
            })
            .collect()
    }

    /// Canonical JSON form, scores at six decimal places.
    pub fn to_json(&self) -> String {
        let items: Vec<_> = self
            .items
            .iter()
            .map(|item| {
                json!({
                    "index": item.evidence.index,
                    "text": item.evidence.text,
                    "sim_score": item.sim_score,
                    "llm_rank": item.llm_rank,
                    "fused_score": item.fused_score,
                })
            })
            .collect();
        canonical_json(&json!({
            "question_id": self.question_id,
            "n": self.n_requested,
            "k": self.k,
            "items": items,
            "filtered": self.filtered,
        }))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct ItemRepr {
            index: usize,
            text: String,
            sim_score: f64,
            llm_rank: u32,
            fused_score: f64,
        }
        #[derive(Deserialize)]
        struct SetRepr {
            question_id: String,
            n: u32,
            k: u32,
            items: Vec<ItemRepr>,
            filtered: Vec<usize>,
        }
        let repr: SetRepr = serde_json::from_str(text)?;
        let items = repr
            .items
            .into_iter()
            .map(|item| {
                Ok(RankedEvidence {
                    evidence: Evidence::new(item.index, item.text)?,
                    sim_score: item.sim_score,
                    llm_rank: item.llm_rank,
                    llm_rank_score: item.fused_score - item.sim_score,
                    fused_score: item.fused_score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            question_id: repr.question_id,
            n_requested: repr.n,
            k: repr.k,
            items,
            filtered: repr.filtered,
            ranking_quality: RankingQuality::Clean,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{ScriptedChatProvider, ScriptedFixture};
    use proptest::prelude::*;

    fn scripted_teacher(entries: &[(Vec<crate::providers::ChatMessage>, &str)]) -> ChatHandle {
        let mut fixture = ScriptedFixture::new("scripted-teacher");
        let probe = ChatHandle::new(
            std::sync::Arc::new(ScriptedChatProvider::new(ScriptedFixture::new("probe"))),
            "teacher-model",
        );
        for (messages, content) in entries {
            let request = probe.request(messages.clone()).unwrap();
            fixture.insert(&request, content).unwrap();
        }
        ChatHandle::new(
            std::sync::Arc::new(ScriptedChatProvider::new(fixture)),
            "teacher-model",
        )
    }

    fn q(stem: &str) -> Question {
        Question::new("q1", stem)
    }

    #[test]
    fn parser_strips_markers_and_assigns_indices() {
        let parsed = parse_evidence_lines("1. A\n2. B\n3. C", 3);
        assert_eq!(parsed, vec!["A", "B", "C"]);
        let parsed = parse_evidence_lines("- A\n• B\n* C\n\n4) D", 10);
        assert_eq!(parsed, vec!["A", "B", "C", "D"]);
    }

    #[test]
    fn parser_keeps_first_n_when_teacher_over_generates() {
        let completion = (1..=7)
            .map(|i| format!("{i}. line {i}"))
            .collect::<Vec<_>>()
            .join("\n");
        let parsed = parse_evidence_lines(&completion, 5);
        assert_eq!(parsed.len(), 5);
        assert_eq!(parsed[4], "line 5");
    }

    #[test]
    fn generate_evidence_errors_on_zero_parseable_lines() {
        let question = q("Why?");
        let teacher = scripted_teacher(&[(prompts::evidence_messages("Why?", 3), "\n   \n")]);
        let err = generate_evidence(&question, 3, &teacher).unwrap_err();
        assert!(matches!(
            err,
            DragError::Parse {
                stage: "evidence",
                ..
            }
        ));
    }

    #[test]
    fn cosine_matches_hand_arithmetic() {
        let unit = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(score_semantic(&unit, &unit).unwrap(), 1.0);

        let other = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(score_semantic(&unit, &other).unwrap(), 0.0);

        // e=(1,1), q=(1,0): dot 1, norms sqrt(2) and 1 -> 1/sqrt(2) = 0.7071...
        let e = EmbeddingVector::new(vec![1.0, 1.0]).unwrap();
        let expected = std::f64::consts::FRAC_1_SQRT_2;
        assert!((score_semantic(&e, &unit).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn cosine_rejects_zero_norm_and_dim_mismatch() {
        let zero = EmbeddingVector::new(vec![0.0, 0.0]).unwrap();
        let unit = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        assert!(score_semantic(&zero, &unit).is_err());
        let three = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(score_semantic(&three, &unit).is_err());
    }

    #[test]
    fn ranking_parse_reads_most_to_least_relevant() {
        // "2, 1, 3": evidence0 -> 2, evidence1 -> 1, evidence2 -> 3.
        let ranking = parse_ranking("2, 1, 3", 3);
        assert_eq!(ranking.ranks, vec![2, 1, 3]);
        assert_eq!(ranking.quality, RankingQuality::Clean);

        // "1, 1, 3": duplicate displaced, missing 2 filled in original order.
        let ranking = parse_ranking("1, 1, 3", 3);
        assert_eq!(ranking.ranks, vec![1, 2, 3]);
        assert_eq!(ranking.quality, RankingQuality::Repaired);
    }

    #[test]
    fn ranking_with_no_integers_falls_back_to_identity() {
        let ranking = parse_ranking("I cannot rank these.", 4);
        assert_eq!(ranking.ranks, vec![1, 2, 3, 4]);
        assert_eq!(ranking.quality, RankingQuality::Fallback);
    }

    #[test]
    fn single_evidence_is_rank_one_without_a_teacher_call() {
        let provider =
            std::sync::Arc::new(ScriptedChatProvider::new(ScriptedFixture::new("empty")));
        let teacher = ChatHandle::new(provider.clone(), "teacher-model");
        let evidences = vec![Evidence::new(0, "only one").unwrap()];
        let ranking = score_llm_rank(&q("stem"), &evidences, &teacher).unwrap();
        assert_eq!(ranking.ranks, vec![1]);
        assert_eq!(provider.call_count(), 0);
    }

    /// Enumerate every rank sequence of length <= 4 over values 0..=5 for
    /// n = 3 and n = 4 and check the repair contract: the result is always a
    /// valid permutation, and clean permutations pass through unchanged.
    #[test]
    fn repair_rule_oracle_over_all_malformed_sequences() {
        const ALPHABET: u64 = 6;
        for n in [3usize, 4] {
            for len in 0usize..=4 {
                for code in 0..ALPHABET.pow(len as u32) {
                    let mut seq = Vec::with_capacity(len);
                    let mut rest = code;
                    for _ in 0..len {
                        seq.push(rest % ALPHABET);
                        rest /= ALPHABET;
                    }
                    let repaired = repair_permutation(&seq, n);
                    let mut sorted = repaired.clone();
                    sorted.sort_unstable();
                    let expected: Vec<u32> = (1..=n as u32).collect();
                    assert_eq!(sorted, expected, "not a permutation for input {seq:?}");

                    let is_clean =
                        seq.len() == n && seq.iter().all(|v| (1..=n as u64).contains(v)) && {
                            let mut s = seq.clone();
                            s.sort_unstable();
                            s == (1..=n as u64).collect::<Vec<_>>()
                        };
                    if is_clean {
                        let as_u32: Vec<u32> = seq.iter().map(|v| *v as u32).collect();
                        assert_eq!(repaired, as_u32, "clean permutation must pass through");
                    }
                }
            }
        }
    }

    #[test]
    fn fusion_matches_hand_computed_values() {
        assert_eq!(fuse_scores(0.8, 1, 5), 0.8 + 1.0);
        assert_eq!(fuse_scores(0.8, 5, 5), 0.8 + 0.2);
        assert_eq!(fuse_scores(0.0, 3, 5), 0.6);
    }

    fn ranked(index: usize, text: &str, sim: f64, rank: u32, n: u32) -> RankedEvidence {
        RankedEvidence::new(Evidence::new(index, text).unwrap(), sim, rank, n)
    }

    #[test]
    fn filter_orders_by_descending_fused_score() {
        // fused: 1.8, 1.0, 1.4
        let items = vec![
            ranked(0, "first", 0.8, 1, 3),  // 0.8 + 1.0
            ranked(1, "second", 0.0, 1, 3), // 0.0 + 1.0
            ranked(2, "third", 0.4, 1, 3),  // 0.4 + 1.0
        ];
        assert_eq!(filter_evidence(&items, 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn filter_breaks_ties_by_text_then_index() {
        let items = vec![
            ranked(0, "b", 0.5, 1, 3),
            ranked(1, "a", 0.5, 1, 3),
            ranked(2, "c", 0.5, 1, 3),
        ];
        assert_eq!(filter_evidence(&items, 2).unwrap(), vec![1, 0]);
    }

    #[test]
    fn filter_with_large_k_returns_all_sorted() {
        let items = vec![ranked(0, "x", 0.1, 2, 2), ranked(1, "y", 0.9, 1, 2)];
        assert_eq!(filter_evidence(&items, 10).unwrap(), vec![1, 0]);
    }

    #[test]
    fn filter_rejects_empty_items() {
        assert!(filter_evidence(&[], 1).is_err());
    }

    /// Independent selection-sort oracle with the same tie-break, used to
    /// cross-check the production comparator.
    fn selection_sort_oracle(items: &[RankedEvidence], k: u32) -> Vec<usize> {
        let mut pool: Vec<&RankedEvidence> = items.iter().collect();
        let mut picked = Vec::new();
        while !pool.is_empty() && picked.len() < k as usize {
            let mut best = 0;
            for i in 1..pool.len() {
                let a = &pool[i];
                let b = &pool[best];
                let better = if a.fused_score != b.fused_score {
                    a.fused_score > b.fused_score
                } else if a.evidence.text != b.evidence.text {
                    a.evidence.text < b.evidence.text
                } else {
                    a.evidence.index < b.evidence.index
                };
                if better {
                    best = i;
                }
            }
            picked.push(pool.remove(best).evidence.index);
        }
        picked
    }

    proptest! {
        #[test]
        fn filter_matches_selection_sort_oracle(
            sims in proptest::collection::vec(-1.0f64..=1.0, 1..8),
            k in 1u32..10,
        ) {
            let n = sims.len() as u32;
            let items: Vec<RankedEvidence> = sims
                .iter()
                .enumerate()
                .map(|(i, &sim)| ranked(i, &format!("text {i}"), sim, (i as u32 % n) + 1, n))
                .collect();
            prop_assert_eq!(
                filter_evidence(&items, k).unwrap(),
                selection_sort_oracle(&items, k)
            );
        }

        #[test]
        fn filter_is_permutation_invariant(
            sims in proptest::collection::vec(-1.0f64..=1.0, 2..8),
            rotation in 0usize..8,
        ) {
            let n = sims.len() as u32;
            let items: Vec<RankedEvidence> = sims
                .iter()
                .enumerate()
                .map(|(i, &sim)| ranked(i, &format!("unique {i}"), sim, (i as u32 % n) + 1, n))
                .collect();
            let mut rotated = items.clone();
            rotated.rotate_left(rotation % items.len());
            let a: BTreeSet<usize> = filter_evidence(&items, 3).unwrap().into_iter().collect();
            let b: BTreeSet<usize> = filter_evidence(&rotated, 3).unwrap().into_iter().collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn raising_sim_never_lowers_position(
            sims in proptest::collection::vec(-0.9f64..=0.9, 2..8),
            target in 0usize..8,
            bump in 0.01f64..0.1,
        ) {
            let n = sims.len() as u32;
            let target = target % sims.len();
            let build = |sims: &[f64]| -> Vec<RankedEvidence> {
                sims.iter()
                    .enumerate()
                    .map(|(i, &sim)| ranked(i, &format!("text {i}"), sim, (i as u32 % n) + 1, n))
                    .collect()
            };
            let before_items = build(&sims);
            let mut bumped = sims.clone();
            bumped[target] += bump;
            let after_items = build(&bumped);

            let before = filter_evidence(&before_items, n).unwrap();
            let after = filter_evidence(&after_items, n).unwrap();
            let pos_before = before.iter().position(|&i| i == target).unwrap();
            let pos_after = after.iter().position(|&i| i == target).unwrap();
            prop_assert!(pos_after <= pos_before);
        }

        #[test]
        fn fused_scores_stay_in_bounds(
            sim in -1.0f64..=1.0,
            rank in 1u32..=20,
            n in 1u32..=20,
        ) {
            let rank = rank.min(n);
            let fused = fuse_scores(sim, rank, n);
            prop_assert!(fused > -1.0 && fused <= 2.0);
            let rs = fused - sim;
            prop_assert!(rs > 0.0 && rs <= 1.0 + 1e-12);
        }

        #[test]
        fn parser_round_trips_numbered_lists(
            texts in proptest::collection::vec("[A-Za-z][A-Za-z ]{0,30}[A-Za-z]", 1..6),
        ) {
            let rendered = prompts::numbered_lines(&texts);
            let reparsed = parse_evidence_lines(&rendered, texts.len() as u32);
            let trimmed: Vec<String> = texts.iter().map(|t| t.trim().to_string()).collect();
            prop_assert_eq!(reparsed, trimmed);
        }
    }

    #[test]
    fn equal_sims_follow_llm_rank_order_and_vice_versa() {
        // All sims equal: filtered order equals LLM rank order.
        let items = vec![
            ranked(0, "t0", 0.5, 3, 3),
            ranked(1, "t1", 0.5, 1, 3),
            ranked(2, "t2", 0.5, 2, 3),
        ];
        assert_eq!(filter_evidence(&items, 3).unwrap(), vec![1, 2, 0]);

        // Identity ranks with strictly decreasing sims: index order.
        let items = vec![
            ranked(0, "t0", 0.9, 1, 3),
            ranked(1, "t1", 0.5, 2, 3),
            ranked(2, "t2", 0.1, 3, 3),
        ];
        assert_eq!(filter_evidence(&items, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn build_evidence_set_runs_the_full_stage() {
        let question = q("Why is the sky blue?");
        let teacher = scripted_teacher(&[
            (
                prompts::evidence_messages("Why is the sky blue?", 3),
                "1. Rayleigh scattering favors short wavelengths.\n2. Sunlight contains all colors.\n3. Blue light scatters more than red.",
            ),
            (
                prompts::ranking_messages(
                    "Why is the sky blue?",
                    &[
                        "Rayleigh scattering favors short wavelengths.",
                        "Sunlight contains all colors.",
                        "Blue light scatters more than red.",
                    ],
                ),
                "3, 1, 2",
            ),
        ]);
        let embedder: Arc<dyn EmbeddingProvider> =
            Arc::new(crate::providers::mock::HashedEmbedder::new(64));
        let set = build_evidence_set(&question, 3, 2, &teacher, &embedder).unwrap();
        assert_eq!(set.items.len(), 3);
        // Ranking "3, 1, 2": ev2 rank 1, ev0 rank 2, ev1 rank 3.
        assert_eq!(set.filtered, vec![2, 0]);
        assert_eq!(set.ranking_quality, RankingQuality::Clean);
        // Scores serialized with 6 decimal places.
        let json = set.to_json();
        assert!(json.contains("\"fused_score\":1.000000"), "{json}");
        let restored = EvidenceSet::from_json(&json).unwrap();
        assert_eq!(restored.filtered, set.filtered);
        assert_eq!(restored.items.len(), set.items.len());
    }

    #[test]
    fn question_validation_enforces_label_order() {
        let good = Question::new("x", "stem")
            .with_choices(vec![Choice::new('a', "one"), Choice::new('b', "two")]);
        assert!(good.validate().is_ok());
        let bad = Question::new("x", "stem")
            .with_choices(vec![Choice::new('a', "one"), Choice::new('c', "two")]);
        assert!(bad.validate().is_err());
    }
}
