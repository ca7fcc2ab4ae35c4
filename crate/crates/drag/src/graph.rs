//! Relationship-triple extraction and graph distillation.
//!
//! Each filtered evidence is turned into `(entity | entity | relationship)`
//! triples by the teacher. The triples form a multigraph (parallel edges
//! allowed), are ranked against the question with the same fusion machinery
//! as evidence, and parallel edges between the same unordered entity pair can
//! be aggregated into a single summarized edge, yielding a simple graph.
//!
//! Entities are compared case-insensitively after trimming; no stemming or
//! entity linking.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::json;

use crate::error::{DragError, Result};
use crate::evidence::{fuse_scores, fused_cmp, rank_texts, EvidenceSet, Question};
use crate::providers::{prompts, ChatHandle, EmbeddingProvider};
use crate::store::canonical_json;

/// Case-insensitive trim; the comparison key for entities.
pub fn canonical_entity(text: &str) -> String {
    text.trim().to_lowercase()
}

/// An (entity, entity, relationship-sentence) edge extracted from one
/// evidence. Head/tail order is preserved for rendering; aggregation treats
/// the pair as unordered.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationTriple {
    pub head: String,
    pub tail: String,
    pub relation: String,
    /// Index of the evidence this triple came from.
    pub source_evidence: usize,
    pub sim_score: Option<f64>,
    pub llm_rank: Option<u32>,
    pub fused_score: Option<f64>,
}

impl RelationTriple {
    pub fn new(
        head: impl Into<String>,
        tail: impl Into<String>,
        relation: impl Into<String>,
        source_evidence: usize,
    ) -> Result<Self> {
        let head = head.into().trim().to_string();
        let tail = tail.into().trim().to_string();
        if head.is_empty() || tail.is_empty() {
            return Err(DragError::InvalidInput(
                "triple endpoints must be non-empty".into(),
            ));
        }
        Ok(Self {
            head,
            tail,
            relation: relation.into().trim().to_string(),
            source_evidence,
            sim_score: None,
            llm_rank: None,
            fused_score: None,
        })
    }

    /// Natural-language rendering used for embedding and ranking.
    pub fn rendered_sentence(&self) -> String {
        format!("{} {} {}", self.head, self.relation, self.tail)
    }

    /// Unordered canonical pair key for aggregation.
    pub fn pair_key(&self) -> (String, String) {
        let a = canonical_entity(&self.head);
        let b = canonical_entity(&self.tail);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }
}

/// Entity graph permitting parallel edges, in extraction order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultiGraph {
    /// canonical entity -> first-seen surface form
    nodes: BTreeMap<String, String>,
    edges: Vec<RelationTriple>,
}

impl MultiGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[RelationTriple] {
        &self.edges
    }

    /// Surface forms sorted by canonical entity.
    pub fn node_names(&self) -> Vec<&str> {
        self.nodes.values().map(String::as_str).collect()
    }

    pub fn to_json(&self) -> String {
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| {
                json!({
                    "head": e.head,
                    "tail": e.tail,
                    "relation": e.relation,
                    "source": e.source_evidence,
                })
            })
            .collect();
        canonical_json(&json!({
            "nodes": self.node_names(),
            "edges": edges,
        }))
    }
}

/// One aggregated edge of a simple graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleEdge {
    pub head: String,
    pub tail: String,
    pub relation: String,
    /// Evidence indices of every multigraph edge merged into this one.
    pub sources: Vec<usize>,
}

/// Graph with at most one edge per unordered entity pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimpleGraph {
    nodes: BTreeMap<String, String>,
    edges: BTreeMap<(String, String), SimpleEdge>,
}

impl SimpleGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_names(&self) -> Vec<&str> {
        self.nodes.values().map(String::as_str).collect()
    }

    /// Edges sorted by canonical (head, tail) pair.
    pub fn edges(&self) -> impl Iterator<Item = &SimpleEdge> {
        self.edges.values()
    }

    /// View the simple graph as a multigraph again (one edge per pair, the
    /// first source as provenance), which is how idempotence of aggregation
    /// is checked.
    pub fn as_multigraph(&self) -> MultiGraph {
        let edges = self
            .edges
            .values()
            .map(|e| RelationTriple {
                head: e.head.clone(),
                tail: e.tail.clone(),
                relation: e.relation.clone(),
                source_evidence: e.sources.first().copied().unwrap_or(0),
                sim_score: None,
                llm_rank: None,
                fused_score: None,
            })
            .collect();
        MultiGraph {
            nodes: self.nodes.clone(),
            edges,
        }
    }

    pub fn to_json(&self) -> String {
        let edges: Vec<_> = self
            .edges
            .values()
            .map(|e| {
                json!({
                    "head": e.head,
                    "tail": e.tail,
                    "relation": e.relation,
                    "sources": e.sources,
                })
            })
            .collect();
        canonical_json(&json!({
            "nodes": self.node_names(),
            "edges": edges,
        }))
    }
}

/// Parse one completion line as a pipe-delimited triple. Surrounding
/// parentheses and a leading list marker are tolerated; anything without
/// three fields is rejected.
fn parse_triple_line(line: &str, source_evidence: usize) -> Option<RelationTriple> {
    let mut trimmed = line.trim();
    trimmed = trimmed.trim_start_matches(['-', '*', '•']).trim_start();
    let trimmed = trimmed
        .strip_prefix('(')
        .and_then(|rest| rest.strip_suffix(')'))
        .unwrap_or(trimmed);
    let mut parts = trimmed.splitn(3, '|');
    let head = parts.next()?.trim();
    let tail = parts.next()?.trim();
    let relation = parts.next()?.trim();
    if head.is_empty() || tail.is_empty() {
        return None;
    }
    RelationTriple::new(head, tail, relation, source_evidence).ok()
}

/// Ask the teacher for the relationship triples of one evidence statement.
/// Zero parseable triples is not an error: the evidence contributes no edges.
pub fn extract_triples(
    evidence: &crate::evidence::Evidence,
    teacher: &ChatHandle,
) -> Result<Vec<RelationTriple>> {
    if evidence.text.trim().is_empty() {
        return Err(DragError::InvalidInput(
            "evidence text must be non-empty".into(),
        ));
    }
    let response = teacher.complete(prompts::triple_messages(&evidence.text))?;
    let triples: Vec<RelationTriple> = response
        .content
        .lines()
        .filter_map(|line| parse_triple_line(line, evidence.index))
        .collect();
    if triples.is_empty() {
        log::info!(
            "evidence {} contributed no parseable triples",
            evidence.index
        );
    }
    Ok(triples)
}

/// Assemble a multigraph from triples: nodes are the canonicalized
/// endpoints, edges keep input order, duplicates stay as parallel edges.
pub fn build_multigraph(triples: &[RelationTriple]) -> MultiGraph {
    let mut nodes: BTreeMap<String, String> = BTreeMap::new();
    for triple in triples {
        nodes
            .entry(canonical_entity(&triple.head))
            .or_insert_with(|| triple.head.trim().to_string());
        nodes
            .entry(canonical_entity(&triple.tail))
            .or_insert_with(|| triple.tail.trim().to_string());
    }
    MultiGraph {
        nodes,
        edges: triples.to_vec(),
    }
}

/// Score and filter triples exactly like evidence: cosine of the rendered
/// sentence against the question embedding, teacher rank, fused sum, and the
/// shared tie-break (descending fused, ascending rendered text, ascending
/// position). Returns the top `min(k, |triples|)` in descending fused order.
pub fn rank_triples(
    question: &Question,
    triples: &[RelationTriple],
    embedder: &Arc<dyn EmbeddingProvider>,
    teacher: &ChatHandle,
    k: u32,
) -> Result<Vec<RelationTriple>> {
    if k == 0 {
        return Err(DragError::InvalidInput("k must be at least 1".into()));
    }
    if triples.is_empty() {
        return Err(DragError::InvalidInput(
            "cannot rank an empty triple list".into(),
        ));
    }
    let rendered: Vec<String> = triples.iter().map(|t| t.rendered_sentence()).collect();

    let mut batch = Vec::with_capacity(rendered.len() + 1);
    batch.push(question.stem.clone());
    batch.extend(rendered.iter().cloned());
    let vectors = embedder.embed_texts(&batch)?;
    let query_vector = &vectors[0];

    let rendered_refs: Vec<&str> = rendered.iter().map(String::as_str).collect();
    let ranking = rank_texts(&question.id, &question.stem, &rendered_refs, teacher)?;

    let m = triples.len() as u32;
    let mut scored: Vec<(RelationTriple, String, usize)> = Vec::with_capacity(triples.len());
    for (i, triple) in triples.iter().enumerate() {
        let sim = crate::evidence::score_semantic(&vectors[i + 1], query_vector)?;
        let rank = ranking.ranks[i];
        let mut scored_triple = triple.clone();
        scored_triple.sim_score = Some(sim);
        scored_triple.llm_rank = Some(rank);
        scored_triple.fused_score = Some(fuse_scores(sim, rank, m));
        scored.push((scored_triple, rendered[i].clone(), i));
    }
    scored.sort_by(|a, b| {
        fused_cmp(
            (a.0.fused_score.unwrap(), a.1.as_str(), a.2),
            (b.0.fused_score.unwrap(), b.1.as_str(), b.2),
        )
    });
    Ok(scored
        .into_iter()
        .take(k as usize)
        .map(|(triple, _, _)| triple)
        .collect())
}

/// Merge parallel edges: pairs with a single edge pass through untouched
/// (no teacher call); pairs with two or more get one aggregated relation from
/// the teacher. If the teacher fails, the parallel relations are concatenated
/// with "; " and the degradation is logged. Nodes are never added or removed.
pub fn aggregate_simple_graph(graph: &MultiGraph, teacher: &ChatHandle) -> Result<SimpleGraph> {
    // Group edges by unordered pair; BTreeMap gives pair-lexicographic order,
    // so concurrent callers would merge identically.
    let mut groups: BTreeMap<(String, String), Vec<&RelationTriple>> = BTreeMap::new();
    for edge in &graph.edges {
        groups.entry(edge.pair_key()).or_default().push(edge);
    }
    let mut edges: BTreeMap<(String, String), SimpleEdge> = BTreeMap::new();
    for (pair, group) in groups {
        let first = group[0];
        let relation = if group.len() == 1 {
            first.relation.clone()
        } else {
            let relations: Vec<&str> = group.iter().map(|e| e.relation.as_str()).collect();
            let merged = prompts::aggregation_messages(&relations)
                .map_err(DragError::from)
                .and_then(|messages| teacher.complete(messages).map_err(DragError::from))
                .map(|response| response.content.trim().to_string());
            match merged {
                Ok(text) if !text.is_empty() => text,
                Ok(_) | Err(_) => {
                    log::warn!(
                        "degraded aggregation for pair ({}, {}): concatenating {} relations",
                        pair.0,
                        pair.1,
                        group.len()
                    );
                    relations.join("; ")
                }
            }
        };
        let mut sources: Vec<usize> = group.iter().map(|e| e.source_evidence).collect();
        sources.sort_unstable();
        sources.dedup();
        edges.insert(
            pair,
            SimpleEdge {
                head: first.head.clone(),
                tail: first.tail.clone(),
                relation,
                sources,
            },
        );
    }
    Ok(SimpleGraph {
        nodes: graph.nodes.clone(),
        edges,
    })
}

/// Render triples for the student prompt: one `- (head, tail): relation`
/// line per triple, in the given order.
pub fn render_triples(triples: &[RelationTriple]) -> String {
    triples
        .iter()
        .map(|t| format!("- ({}, {}): {}", t.head, t.tail, t.relation))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The full graph stage for one question: extract triples from the filtered
/// evidences (ascending evidence index, so concurrency cannot reorder them),
/// then rank and keep the top `k`. An empty result means no evidence yielded
/// triples; callers decide whether that is terminal for their mode.
pub fn distill_triples(
    question: &Question,
    evidence_set: &EvidenceSet,
    k: u32,
    teacher: &ChatHandle,
    embedder: &Arc<dyn EmbeddingProvider>,
) -> Result<Vec<RelationTriple>> {
    let mut filtered = evidence_set.filtered_evidences();
    filtered.sort_by_key(|e| e.index);
    let mut triples = Vec::new();
    for evidence in filtered {
        triples.extend(extract_triples(evidence, teacher)?);
    }
    if triples.is_empty() {
        return Ok(Vec::new());
    }
    rank_triples(question, &triples, embedder, teacher, k)
}
