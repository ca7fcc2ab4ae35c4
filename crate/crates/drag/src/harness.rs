//! Evaluation harness: dataset loading, (mode, K) sweeps, accuracy and token
//! statistics, and report emission.
//!
//! Every question is answered once without context (the "Original" baseline)
//! and once per (mode, K) cell. Provider calls go through the
//! content-addressed store, so an interrupted run resumes from its checkpoint
//! and a repeated run makes zero provider calls.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DragError, Result};
use crate::evidence::{build_evidence_set, Choice, Question};
use crate::graph::{distill_triples, render_triples};
use crate::providers::{ChatHandle, ChatMessage, EmbeddingProvider, ProviderError};
use crate::store::{canonical_json, CachingChatProvider, FileStore};
use crate::student::{
    assemble_context, interpret_raw, render_baseline_prompt, ContextMode, StudentAnswer,
};

/// Source benchmark a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetTag {
    ArcC,
    Mmlu,
    MedMcqa,
    Gpqa,
    OpenLlm,
    Averitec,
    PrivacyBench,
    Custom,
}

impl DatasetTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetTag::ArcC => "arc_c",
            DatasetTag::Mmlu => "mmlu",
            DatasetTag::MedMcqa => "medmcqa",
            DatasetTag::Gpqa => "gpqa",
            DatasetTag::OpenLlm => "open_llm",
            DatasetTag::Averitec => "averitec",
            DatasetTag::PrivacyBench => "privacy_bench",
            DatasetTag::Custom => "custom",
        }
    }

    fn requires_choices_and_gold(&self) -> bool {
        matches!(
            self,
            DatasetTag::ArcC | DatasetTag::Mmlu | DatasetTag::MedMcqa | DatasetTag::Gpqa
        )
    }
}

impl FromStr for DatasetTag {
    type Err = DragError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "arc_c" | "arc-c" | "arc" => Ok(DatasetTag::ArcC),
            "mmlu" => Ok(DatasetTag::Mmlu),
            "medmcqa" => Ok(DatasetTag::MedMcqa),
            "gpqa" => Ok(DatasetTag::Gpqa),
            "open_llm" | "open-llm" => Ok(DatasetTag::OpenLlm),
            "averitec" => Ok(DatasetTag::Averitec),
            "privacy_bench" | "privacy-bench" => Ok(DatasetTag::PrivacyBench),
            "custom" => Ok(DatasetTag::Custom),
            other => Err(DragError::InvalidInput(format!(
                "unknown dataset tag {other:?}"
            ))),
        }
    }
}

/// A question together with its source tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub question: Question,
    pub source: DatasetTag,
}

/// The four AVERITEC verdicts, in label order a–d.
pub const AVERITEC_VERDICTS: [(&str, &str); 4] = [
    ("supported", "Supported"),
    ("refuted", "Refuted"),
    ("not-enough-evidence", "Not enough evidence"),
    ("conflicting", "Conflicting evidence"),
];

fn averitec_question(id: String, claim: &str, verdict: &str) -> Result<Question> {
    let position = AVERITEC_VERDICTS
        .iter()
        .position(|(key, _)| *key == verdict)
        .ok_or_else(|| {
            DragError::InvalidInput(format!(
                "verdict {verdict:?} is not one of supported, refuted, not-enough-evidence, conflicting"
            ))
        })?;
    let choices: Vec<Choice> = AVERITEC_VERDICTS
        .iter()
        .enumerate()
        .map(|(i, (_, text))| Choice::new((b'a' + i as u8) as char, *text))
        .collect();
    let gold = ((b'a' + position as u8) as char).to_string();
    Ok(Question::new(id, claim)
        .with_choices(choices)
        .with_gold(gold))
}

fn parse_record_line(line: &str, tag: DatasetTag) -> std::result::Result<Question, String> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("not valid JSON: {e}"))?;
    let id = value
        .get("id")
        .and_then(serde_json::Value::as_str)
        .ok_or("missing string field \"id\"")?
        .to_string();

    if tag == DatasetTag::Averitec {
        let claim = value
            .get("claim")
            .and_then(serde_json::Value::as_str)
            .ok_or("missing string field \"claim\"")?;
        let verdict = value
            .get("verdict")
            .and_then(serde_json::Value::as_str)
            .ok_or("missing string field \"verdict\"")?;
        return averitec_question(id, claim, verdict).map_err(|e| e.to_string());
    }

    if tag == DatasetTag::PrivacyBench {
        // Privacy benchmark rows carry the augmented stem; evaluation runs
        // against the question the user would actually ask.
        let stem = value
            .get("augmented_stem")
            .and_then(serde_json::Value::as_str)
            .ok_or("missing string field \"augmented_stem\"")?;
        let mut question = Question::new(id, stem);
        if let Some(choices) = value.get("choices") {
            question.choices =
                Some(serde_json::from_value(choices.clone()).map_err(|e| e.to_string())?);
        }
        if let Some(gold) = value.get("gold").and_then(serde_json::Value::as_str) {
            question.gold = Some(gold.to_string());
        }
        question.validate().map_err(|e| e.to_string())?;
        return Ok(question);
    }

    let stem = value
        .get("question")
        .and_then(serde_json::Value::as_str)
        .ok_or("missing string field \"question\"")?;
    let mut question = Question::new(id, stem);
    if let Some(choices) = value.get("choices") {
        let choices: Vec<Choice> =
            serde_json::from_value(choices.clone()).map_err(|e| format!("bad choices: {e}"))?;
        if !choices.is_empty() {
            question.choices = Some(choices);
        }
    }
    if let Some(answer) = value.get("answer").and_then(serde_json::Value::as_str) {
        question.gold = Some(answer.to_string());
    }
    if let Some(subject) = value.get("subject").and_then(serde_json::Value::as_str) {
        question.subject = Some(subject.to_string());
    }
    question.validate().map_err(|e| e.to_string())?;

    if tag.requires_choices_and_gold() {
        let enough = question
            .choices
            .as_deref()
            .is_some_and(|choices| choices.len() >= 2);
        if !enough {
            return Err("MCQA record needs at least 2 choices".into());
        }
        let gold_is_label = question
            .gold
            .as_deref()
            .and_then(|g| {
                let c = g.trim().chars().next()?;
                Some(
                    g.trim().chars().count() == 1
                        && question
                            .choices
                            .as_deref()
                            .unwrap()
                            .iter()
                            .any(|choice| choice.label == c.to_ascii_lowercase()),
                )
            })
            .unwrap_or(false);
        if !gold_is_label {
            return Err("MCQA record needs a gold label matching a choice".into());
        }
    }
    Ok(question)
}

/// Load and validate a JSONL dataset. Malformed lines and duplicate ids are
/// terminal, reported with their line number.
pub fn load_dataset(path: &Path, tag: DatasetTag) -> Result<Vec<DatasetRecord>> {
    let content = std::fs::read_to_string(path).map_err(|e| DragError::Dataset {
        path: path.display().to_string(),
        line: 0,
        message: format!("cannot read file: {e}"),
    })?;
    let mut records = Vec::new();
    let mut seen_ids = std::collections::BTreeSet::new();
    for (line_idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let question = parse_record_line(line, tag).map_err(|message| DragError::Dataset {
            path: path.display().to_string(),
            line: line_idx + 1,
            message,
        })?;
        if !seen_ids.insert(question.id.clone()) {
            return Err(DragError::Dataset {
                path: path.display().to_string(),
                line: line_idx + 1,
                message: format!("duplicate id {:?}", question.id),
            });
        }
        records.push(DatasetRecord {
            question,
            source: tag,
        });
    }
    Ok(records)
}

/// Settings for one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub teacher_id: String,
    pub student_id: String,
    pub embedder_id: String,
    /// Evidences to generate per question.
    pub n: u32,
    /// Retrieval sizes to sweep.
    pub k_values: Vec<u32>,
    pub modes: Vec<ContextMode>,
    pub seed: u64,
    pub dataset_path: PathBuf,
    pub dataset_tag: DatasetTag,
    pub offline: bool,
    pub workers: usize,
    /// Separate budget for graph relationships; defaults to the cell's K.
    pub k_graph: Option<u32>,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(DragError::Config("modes must be non-empty".into()));
        }
        if self.k_values.is_empty() {
            return Err(DragError::Config("k values must be non-empty".into()));
        }
        for &k in &self.k_values {
            if k == 0 || k > self.n {
                return Err(DragError::Config(format!(
                    "require 1 <= K <= N for every K; got K={k}, N={}",
                    self.n
                )));
            }
        }
        if let Some(kg) = self.k_graph {
            if kg == 0 {
                return Err(DragError::Config("k_graph must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// Per-cell outcome counts. `correct + incorrect + failed` always equals the
/// dataset size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStats {
    pub correct: usize,
    pub incorrect: usize,
    pub failed: usize,
}

impl CellStats {
    pub fn total(&self) -> usize {
        self.correct + self.incorrect + self.failed
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.correct as f64 / self.total() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub mode: ContextMode,
    pub k: u32,
    pub stats: CellStats,
    pub accuracy: f64,
}

/// Whitespace-token statistics for one category of distilled material.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenCategoryStats {
    /// Total whitespace tokens across all items.
    pub total_count: u64,
    pub item_count: u64,
    /// total/count, rounded to 2 decimals; 0 when there are no items.
    pub mean_length: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub evidence: TokenCategoryStats,
    pub graph: TokenCategoryStats,
}

fn whitespace_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

fn category_stats(total: u64, items: u64) -> TokenCategoryStats {
    let mean = if items == 0 {
        0.0
    } else {
        (total as f64 / items as f64 * 100.0).round() / 100.0
    };
    TokenCategoryStats {
        total_count: total,
        item_count: items,
        mean_length: mean,
    }
}

/// Token statistics over evidence texts and rendered triple lines. A token
/// is a maximal whitespace-delimited run.
pub fn token_statistics<S: AsRef<str>, T: AsRef<str>>(
    evidences: &[S],
    triples: &[T],
) -> TokenStats {
    let evidence_total: u64 = evidences
        .iter()
        .map(|e| whitespace_token_count(e.as_ref()))
        .sum();
    let graph_total: u64 = triples
        .iter()
        .map(|t| whitespace_token_count(t.as_ref()))
        .sum();
    TokenStats {
        evidence: category_stats(evidence_total, evidences.len() as u64),
        graph: category_stats(graph_total, triples.len() as u64),
    }
}

/// Accuracy over (choice, gold) pairs; parse failures count as incorrect.
pub fn compute_accuracy(pairs: &[(Option<char>, char)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(DragError::InvalidInput(
            "accuracy undefined over zero answers".into(),
        ));
    }
    let correct = pairs
        .iter()
        .filter(|(choice, gold)| *choice == Some(gold.to_ascii_lowercase()))
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

fn normalize_open_answer(text: &str) -> String {
    text.chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Grade one answer against the question's gold field. Open-style answers are
/// compared by exact match after lowercasing and punctuation stripping — a
/// stated proxy, since no normalization standard exists for that scoring.
pub fn is_correct(question: &Question, answer: &StudentAnswer) -> bool {
    let Some(gold) = question.gold.as_deref() else {
        return false;
    };
    if question.is_multiple_choice() {
        let gold_label = gold.trim().chars().next().map(|c| c.to_ascii_lowercase());
        answer.choice.is_some() && answer.choice == gold_label
    } else {
        answer
            .free_text
            .as_deref()
            .is_some_and(|text| normalize_open_answer(text) == normalize_open_answer(gold))
    }
}

/// One line of the per-question answers JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    /// "baseline" or a context mode name.
    pub mode: String,
    pub k: u32,
    pub rendered_prompt_hash: String,
    pub raw: String,
    pub choice: Option<char>,
    pub correct: bool,
}

fn prompt_hash(rendered: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(rendered.as_bytes());
    hex::encode(hasher.finalize())
}

/// The aggregated result of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub dataset_tag: DatasetTag,
    pub dataset_size: usize,
    pub teacher: String,
    pub student: String,
    pub n: u32,
    pub seed: u64,
    pub baseline: CellStats,
    pub baseline_accuracy: f64,
    pub cells: Vec<EvalCell>,
    pub token_stats: TokenStats,
}

/// Report plus the per-question answer records backing it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub report: EvalReport,
    pub answers: Vec<AnswerRecord>,
}

/// Provider handles for one run.
#[derive(Clone)]
pub struct EvalProviders {
    pub teacher: ChatHandle,
    pub student: ChatHandle,
    pub embedder: Arc<dyn EmbeddingProvider>,
    /// Cache; when present, all chat calls are checkpointed through it.
    pub store: Option<Arc<FileStore>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Correct,
    Incorrect,
    Failed,
}

/// Errors that invalidate the whole run (resumable from the cache) versus
/// errors confined to one question-cell.
pub(crate) fn aborts_run(err: &DragError) -> bool {
    match err {
        DragError::Provider(p) => matches!(
            p,
            ProviderError::Transport(_)
                | ProviderError::Auth(_)
                | ProviderError::FixtureMiss { .. }
                | ProviderError::InvalidRequest(_)
        ),
        DragError::Io(_)
        | DragError::Json(_)
        | DragError::CacheConflict { .. }
        | DragError::Config(_)
        | DragError::Dataset { .. } => true,
        _ => false,
    }
}

struct QuestionRun {
    answers: Vec<AnswerRecord>,
    baseline: Outcome,
    cells: Vec<Outcome>,
    evidence_tokens: (u64, u64),
    graph_tokens: (u64, u64),
}

fn grade(question: &Question, answer: &StudentAnswer) -> Outcome {
    if is_correct(question, answer) {
        Outcome::Correct
    } else {
        Outcome::Incorrect
    }
}

fn run_question(
    question: &Question,
    cells: &[(ContextMode, u32)],
    config: &EvalConfig,
    teacher: &ChatHandle,
    student: &ChatHandle,
    embedder: &Arc<dyn EmbeddingProvider>,
) -> Result<QuestionRun> {
    let mut answers = Vec::new();
    let mut outcomes = Vec::with_capacity(cells.len());
    let mut evidence_tokens = (0u64, 0u64);
    let mut graph_tokens = (0u64, 0u64);

    // Baseline: identical skeleton minus the context blocks.
    let baseline_prompt = render_baseline_prompt(question);
    let baseline = match student.complete(vec![ChatMessage::user(baseline_prompt.clone())]) {
        Ok(response) => {
            let baseline_answer = interpret_raw(
                &response.content,
                question.choices.as_deref(),
                response.token_usage,
            );
            let outcome = grade(question, &baseline_answer);
            answers.push(AnswerRecord {
                question_id: question.id.clone(),
                mode: "baseline".into(),
                k: 0,
                rendered_prompt_hash: prompt_hash(&baseline_prompt),
                raw: baseline_answer.raw.clone(),
                choice: baseline_answer.choice,
                correct: outcome == Outcome::Correct,
            });
            outcome
        }
        Err(err) if aborts_run(&DragError::Provider(err.clone())) => {
            return Err(err.into());
        }
        Err(err) => {
            log::warn!("question {} baseline failed: {err}", question.id);
            answers.push(AnswerRecord {
                question_id: question.id.clone(),
                mode: "baseline".into(),
                k: 0,
                rendered_prompt_hash: prompt_hash(&baseline_prompt),
                raw: String::new(),
                choice: None,
                correct: false,
            });
            Outcome::Failed
        }
    };

    for &(mode, k) in cells {
        let cell_result: Result<(StudentAnswer, String)> = (|| {
            let evidence_set = build_evidence_set(question, config.n, k, teacher, embedder)?;
            let triples = if mode.uses_graph() {
                distill_triples(
                    question,
                    &evidence_set,
                    config.k_graph.unwrap_or(k),
                    teacher,
                    embedder,
                )?
            } else {
                Vec::new()
            };
            let effective_mode = match mode {
                ContextMode::Combined if triples.is_empty() => {
                    log::warn!(
                        "question {}: no triples; combined cell degrades to evidence-only",
                        question.id
                    );
                    ContextMode::EvidenceOnly
                }
                ContextMode::GraphOnly if triples.is_empty() => {
                    return Err(DragError::InvalidInput(format!(
                        "question {}: graph mode produced no triples",
                        question.id
                    )));
                }
                m => m,
            };
            if mode.uses_evidence() || effective_mode.uses_evidence() {
                for text in evidence_set.filtered_texts() {
                    evidence_tokens.0 += whitespace_token_count(text);
                    evidence_tokens.1 += 1;
                }
            }
            if effective_mode.uses_graph() {
                for triple in &triples {
                    graph_tokens.0 +=
                        whitespace_token_count(&render_triples(std::slice::from_ref(triple)));
                    graph_tokens.1 += 1;
                }
            }
            let context = match effective_mode {
                ContextMode::EvidenceOnly => {
                    assemble_context(question, Some(&evidence_set), None, effective_mode)?
                }
                ContextMode::GraphOnly => {
                    assemble_context(question, None, Some(&triples), effective_mode)?
                }
                ContextMode::Combined => assemble_context(
                    question,
                    Some(&evidence_set),
                    Some(&triples),
                    effective_mode,
                )?,
            };
            let student_answer = crate::student::answer(&context, student)?;
            Ok((student_answer, context.rendered))
        })();

        match cell_result {
            Ok((student_answer, rendered)) => {
                let outcome = grade(question, &student_answer);
                answers.push(AnswerRecord {
                    question_id: question.id.clone(),
                    mode: mode.as_str().into(),
                    k,
                    rendered_prompt_hash: prompt_hash(&rendered),
                    raw: student_answer.raw.clone(),
                    choice: student_answer.choice,
                    correct: outcome == Outcome::Correct,
                });
                outcomes.push(outcome);
            }
            Err(err) if aborts_run(&err) => return Err(err),
            Err(err) => {
                log::warn!("question {} cell ({mode}, {k}) failed: {err}", question.id);
                answers.push(AnswerRecord {
                    question_id: question.id.clone(),
                    mode: mode.as_str().into(),
                    k,
                    rendered_prompt_hash: String::new(),
                    raw: String::new(),
                    choice: None,
                    correct: false,
                });
                outcomes.push(Outcome::Failed);
            }
        }
    }

    Ok(QuestionRun {
        answers,
        baseline,
        cells: outcomes,
        evidence_tokens,
        graph_tokens,
    })
}

/// Run the full protocol: baseline plus every (mode, K) cell for every
/// record. Deterministic given providers; resumable through the store.
pub fn run_eval(config: &EvalConfig, providers: &EvalProviders) -> Result<EvalRun> {
    config.validate()?;
    let records = load_dataset(&config.dataset_path, config.dataset_tag)?;
    if records.is_empty() {
        return Err(DragError::InvalidInput(format!(
            "dataset {} is empty",
            config.dataset_path.display()
        )));
    }

    let (teacher, student) = match &providers.store {
        Some(store) => (
            providers
                .teacher
                .with_provider(Arc::new(CachingChatProvider::new(
                    providers.teacher.provider().clone(),
                    store.clone(),
                ))),
            providers
                .student
                .with_provider(Arc::new(CachingChatProvider::new(
                    providers.student.provider().clone(),
                    store.clone(),
                ))),
        ),
        None => (providers.teacher.clone(), providers.student.clone()),
    };

    let cells: Vec<(ContextMode, u32)> = config
        .modes
        .iter()
        .flat_map(|&mode| config.k_values.iter().map(move |&k| (mode, k)))
        .collect();

    let runs: Vec<QuestionRun> = {
        let workers = config.workers.max(1).min(records.len());
        if workers == 1 {
            let mut runs = Vec::with_capacity(records.len());
            for record in &records {
                runs.push(run_question(
                    &record.question,
                    &cells,
                    config,
                    &teacher,
                    &student,
                    &providers.embedder,
                )?);
            }
            runs
        } else {
            let slots: Mutex<Vec<Option<Result<QuestionRun>>>> =
                Mutex::new((0..records.len()).map(|_| None).collect());
            let next = AtomicUsize::new(0);
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let index = next.fetch_add(1, Ordering::SeqCst);
                        if index >= records.len() {
                            break;
                        }
                        let run = run_question(
                            &records[index].question,
                            &cells,
                            config,
                            &teacher,
                            &student,
                            &providers.embedder,
                        );
                        slots.lock().expect("slot lock")[index] = Some(run);
                    });
                }
            });
            slots
                .into_inner()
                .expect("slot lock")
                .into_iter()
                .map(|slot| slot.expect("every slot filled"))
                .collect::<Result<Vec<_>>>()?
        }
    };

    // Order-independent fold over per-question results.
    let mut baseline = CellStats::default();
    let mut cell_stats = vec![CellStats::default(); cells.len()];
    let mut evidence_tokens = (0u64, 0u64);
    let mut graph_tokens = (0u64, 0u64);
    let mut answers = Vec::new();
    for run in &runs {
        match run.baseline {
            Outcome::Correct => baseline.correct += 1,
            Outcome::Incorrect => baseline.incorrect += 1,
            Outcome::Failed => baseline.failed += 1,
        }
        for (stats, outcome) in cell_stats.iter_mut().zip(&run.cells) {
            match outcome {
                Outcome::Correct => stats.correct += 1,
                Outcome::Incorrect => stats.incorrect += 1,
                Outcome::Failed => stats.failed += 1,
            }
        }
        evidence_tokens.0 += run.evidence_tokens.0;
        evidence_tokens.1 += run.evidence_tokens.1;
        graph_tokens.0 += run.graph_tokens.0;
        graph_tokens.1 += run.graph_tokens.1;
        answers.extend(run.answers.iter().cloned());
    }

    let report = EvalReport {
        dataset: config.dataset_path.display().to_string(),
        dataset_tag: config.dataset_tag,
        dataset_size: records.len(),
        teacher: config.teacher_id.clone(),
        student: config.student_id.clone(),
        n: config.n,
        seed: config.seed,
        baseline_accuracy: baseline.accuracy(),
        baseline,
        cells: cells
            .iter()
            .zip(cell_stats)
            .map(|(&(mode, k), stats)| EvalCell {
                mode,
                k,
                accuracy: stats.accuracy(),
                stats,
            })
            .collect(),
        token_stats: TokenStats {
            evidence: category_stats(evidence_tokens.0, evidence_tokens.1),
            graph: category_stats(graph_tokens.0, graph_tokens.1),
        },
    };
    Ok(EvalRun { report, answers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    MarkdownTable,
}

/// Render a report: canonical JSON as the machine form, or a markdown table
/// laid out with one row per student and one column per (mode, K) cell.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(canonical_json(&serde_json::to_value(report)?)),
        ReportFormat::MarkdownTable => {
            let mut header = String::from("| Target SLM | Original |");
            let mut divider = String::from("|---|---|");
            let mut row = format!(
                "| {} | {:.2} |",
                report.student,
                report.baseline_accuracy * 100.0
            );
            for cell in &report.cells {
                header.push_str(&format!(" {} {} |", cell.mode, cell.k));
                divider.push_str("---|");
                row.push_str(&format!(" {:.2} |", cell.accuracy * 100.0));
            }
            let mut out = format!("{header}\n{divider}\n{row}\n");
            out.push_str(&format!(
                "\n| Category | Total Tokens | Items | Mean Length |\n|---|---|---|---|\n\
                 | evidence | {} | {} | {:.2} |\n| graph | {} | {} | {:.2} |\n",
                report.token_stats.evidence.total_count,
                report.token_stats.evidence.item_count,
                report.token_stats.evidence.mean_length,
                report.token_stats.graph.total_count,
                report.token_stats.graph.item_count,
                report.token_stats.graph.mean_length,
            ));
            Ok(out)
        }
    }
}

/// Serialize answer records as JSONL, one canonical line each.
pub fn answers_to_jsonl(answers: &[AnswerRecord]) -> Result<String> {
    let mut out = String::new();
    for record in answers {
        out.push_str(&canonical_json(&serde_json::to_value(record)?));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::ProceduralProvider;
    use std::io::Write;

    fn write_jsonl(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file.flush().unwrap();
        file
    }

    const VALID_MCQA: &str = r#"{"id":"q1","question":"What is water?","choices":[{"label":"a","text":"H2O"},{"label":"b","text":"CO2"}],"answer":"a","subject":"chem"}"#;

    #[test]
    fn loads_valid_mcqa_records() {
        let lines = [
            VALID_MCQA,
            r#"{"id":"q2","question":"What is salt?","choices":[{"label":"a","text":"NaCl"},{"label":"b","text":"KCl"}],"answer":"a"}"#,
            r#"{"id":"q3","question":"What is air?","choices":[{"label":"a","text":"A gas mixture"},{"label":"b","text":"A metal"}],"answer":"a"}"#,
        ];
        let file = write_jsonl(&lines);
        let records = load_dataset(file.path(), DatasetTag::ArcC).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].question.subject.as_deref(), Some("chem"));
    }

    #[test]
    fn missing_gold_label_names_the_line() {
        let lines = [
            VALID_MCQA,
            r#"{"id":"q2","question":"No answer here","choices":[{"label":"a","text":"x"},{"label":"b","text":"y"}]}"#,
        ];
        let file = write_jsonl(&lines);
        let err = load_dataset(file.path(), DatasetTag::Mmlu).unwrap_err();
        match err {
            DragError::Dataset { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Dataset error, got {other}"),
        }
    }

    #[test]
    fn duplicate_ids_are_terminal() {
        let file = write_jsonl(&[VALID_MCQA, VALID_MCQA]);
        let err = load_dataset(file.path(), DatasetTag::ArcC).unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn averitec_verdicts_become_choice_questions() {
        let file = write_jsonl(&[
            r#"{"id":"c1","claim":"The moon is made of rock.","verdict":"refuted"}"#,
        ]);
        let records = load_dataset(file.path(), DatasetTag::Averitec).unwrap();
        let q = &records[0].question;
        assert_eq!(q.gold.as_deref(), Some("b"));
        assert_eq!(q.choices.as_deref().unwrap().len(), 4);

        let bad = write_jsonl(&[r#"{"id":"c2","claim":"x","verdict":"maybe"}"#]);
        assert!(load_dataset(bad.path(), DatasetTag::Averitec).is_err());
    }

    #[test]
    fn accuracy_arithmetic() {
        let pairs = vec![
            (Some('a'), 'a'),
            (Some('b'), 'b'),
            (Some('c'), 'c'),
            (Some('d'), 'a'),
        ];
        assert_eq!(compute_accuracy(&pairs).unwrap(), 0.75);

        let all_failures: Vec<(Option<char>, char)> = (0..4).map(|_| (None, 'a')).collect();
        assert_eq!(compute_accuracy(&all_failures).unwrap(), 0.0);
        assert!(compute_accuracy(&[]).is_err());

        // 649 wrong of 15,090: same arithmetic shape as the reference rate.
        let mut pairs = vec![(Some('a'), 'a'); 15_090 - 649];
        pairs.extend(vec![(None, 'a'); 649]);
        let acc = compute_accuracy(&pairs).unwrap();
        assert!((acc - 0.957).abs() < 5e-4);
    }

    #[test]
    fn token_statistics_means() {
        let stats = token_statistics(&["a b c"], &[] as &[&str]);
        assert_eq!(stats.evidence.mean_length, 3.00);
        assert_eq!(stats.evidence.total_count, 3);
        assert_eq!(stats.graph.item_count, 0);
        assert_eq!(stats.graph.mean_length, 0.0);

        let stats = token_statistics(&["one two", "three four five"], &["- (a, b): r"]);
        assert_eq!(stats.evidence.mean_length, 2.5);
        assert_eq!(stats.graph.total_count, 4);
    }

    fn tiny_config(dataset: &Path) -> EvalConfig {
        EvalConfig {
            teacher_id: "teacher-model".into(),
            student_id: "student-model".into(),
            embedder_id: "hashed".into(),
            n: 3,
            k_values: vec![2],
            modes: vec![ContextMode::EvidenceOnly, ContextMode::GraphOnly],
            seed: 7,
            dataset_path: dataset.to_path_buf(),
            dataset_tag: DatasetTag::Custom,
            offline: true,
            workers: 1,
            k_graph: None,
        }
    }

    fn procedural_providers(store: Option<Arc<FileStore>>) -> EvalProviders {
        EvalProviders {
            teacher: ChatHandle::new(Arc::new(ProceduralProvider::new()), "teacher-model"),
            student: ChatHandle::new(Arc::new(ProceduralProvider::new()), "student-model"),
            embedder: Arc::new(crate::providers::mock::HashedEmbedder::new(256)),
            store,
        }
    }

    #[test]
    fn run_eval_is_deterministic_and_counts_sum() {
        let lines = [
            VALID_MCQA,
            r#"{"id":"q2","question":"What is salt?","choices":[{"label":"a","text":"NaCl"},{"label":"b","text":"KCl"}],"answer":"a"}"#,
        ];
        let file = write_jsonl(&lines);
        let config = tiny_config(file.path());

        let run_a = run_eval(&config, &procedural_providers(None)).unwrap();
        let run_b = run_eval(&config, &procedural_providers(None)).unwrap();
        assert_eq!(
            emit_report(&run_a.report, ReportFormat::Json).unwrap(),
            emit_report(&run_b.report, ReportFormat::Json).unwrap()
        );
        assert_eq!(run_a.answers, run_b.answers);

        for cell in &run_a.report.cells {
            assert_eq!(cell.stats.total(), run_a.report.dataset_size);
        }
        assert_eq!(run_a.report.baseline.total(), run_a.report.dataset_size);
        // baseline + one record per cell per question
        assert_eq!(
            run_a.answers.len(),
            run_a.report.dataset_size * (1 + run_a.report.cells.len())
        );
    }

    #[test]
    fn parallel_run_matches_sequential() {
        let lines = [
            VALID_MCQA,
            r#"{"id":"q2","question":"What is salt?","choices":[{"label":"a","text":"NaCl"},{"label":"b","text":"KCl"}],"answer":"a"}"#,
            r#"{"id":"q3","question":"What is air?","choices":[{"label":"a","text":"A gas mixture"},{"label":"b","text":"A metal"}],"answer":"a"}"#,
        ];
        let file = write_jsonl(&lines);
        let mut config = tiny_config(file.path());
        let sequential = run_eval(&config, &procedural_providers(None)).unwrap();
        config.workers = 3;
        let parallel = run_eval(&config, &procedural_providers(None)).unwrap();
        assert_eq!(
            emit_report(&sequential.report, ReportFormat::Json).unwrap(),
            emit_report(&parallel.report, ReportFormat::Json).unwrap()
        );
        assert_eq!(sequential.answers, parallel.answers);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let file = write_jsonl(&[]);
        let config = tiny_config(file.path());
        assert!(run_eval(&config, &procedural_providers(None)).is_err());
    }

    #[test]
    fn report_json_round_trips() {
        let file = write_jsonl(&[VALID_MCQA]);
        let config = tiny_config(file.path());
        let run = run_eval(&config, &procedural_providers(None)).unwrap();
        let json = emit_report(&run.report, ReportFormat::Json).unwrap();
        let parsed: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, run.report);
        let markdown = emit_report(&run.report, ReportFormat::MarkdownTable).unwrap();
        assert!(markdown.contains("| Target SLM | Original |"));
        assert!(markdown.contains("student-model"));
    }

    #[test]
    fn rerun_with_cache_makes_zero_provider_calls() {
        let file = write_jsonl(&[VALID_MCQA]);
        let config = tiny_config(file.path());
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FileStore::open(dir.path()).unwrap());

        let first = run_eval(&config, &procedural_providers(Some(store.clone()))).unwrap();

        let teacher = Arc::new(ProceduralProvider::new());
        let student = Arc::new(ProceduralProvider::new());
        let providers = EvalProviders {
            teacher: ChatHandle::new(teacher.clone(), "teacher-model"),
            student: ChatHandle::new(student.clone(), "student-model"),
            embedder: Arc::new(crate::providers::mock::HashedEmbedder::new(256)),
            store: Some(store),
        };
        let second = run_eval(&config, &providers).unwrap();
        assert_eq!(teacher.call_count(), 0, "all teacher calls cached");
        assert_eq!(student.call_count(), 0, "all student calls cached");
        assert_eq!(
            emit_report(&first.report, ReportFormat::Json).unwrap(),
            emit_report(&second.report, ReportFormat::Json).unwrap()
        );
    }

    #[test]
    fn interrupted_run_resumes_to_the_identical_report() {
        let lines = [
            VALID_MCQA,
            r#"{"id":"q2","question":"What is salt?","choices":[{"label":"a","text":"NaCl"},{"label":"b","text":"KCl"}],"answer":"a"}"#,
        ];
        let file = write_jsonl(&lines);
        let config = tiny_config(file.path());

        let uninterrupted = run_eval(&config, &procedural_providers(None)).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FileStore::open(dir.path()).unwrap());
        let exhausted = EvalProviders {
            teacher: ChatHandle::new(
                Arc::new(ProceduralProvider::with_budget(3)),
                "teacher-model",
            ),
            student: ChatHandle::new(Arc::new(ProceduralProvider::new()), "student-model"),
            embedder: Arc::new(crate::providers::mock::HashedEmbedder::new(256)),
            store: Some(store.clone()),
        };
        let err = run_eval(&config, &exhausted).unwrap_err();
        assert!(aborts_run(&err), "budget exhaustion aborts: {err}");

        let resumed = run_eval(&config, &procedural_providers(Some(store))).unwrap();
        assert_eq!(
            emit_report(&uninterrupted.report, ReportFormat::Json).unwrap(),
            emit_report(&resumed.report, ReportFormat::Json).unwrap()
        );
    }
}
