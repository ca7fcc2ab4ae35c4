//! Context assembly and student answering.
//!
//! The distilled material (filtered evidence and/or ranked triples) is
//! concatenated with the question into a fixed prompt skeleton and sent to
//! the small model in a single deterministic call. The skeleton is pinned by
//! golden tests because cached fixtures key on its exact bytes.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DragError, Result};
use crate::evidence::{Choice, EvidenceSet, Question};
use crate::graph::{render_triples, RelationTriple};
use crate::providers::{ChatHandle, ChatMessage, TokenUsage};

pub const CONTEXT_HEADER: &str = "Use the following information to answer the question.";
pub const MCQA_INSTRUCTION: &str = "Answer with the letter of the correct choice.";
pub const OPEN_INSTRUCTION: &str = "Answer concisely.";

/// Which distilled material the student sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    #[serde(rename = "evidence")]
    EvidenceOnly,
    #[serde(rename = "graph")]
    GraphOnly,
    Combined,
}

impl ContextMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContextMode::EvidenceOnly => "evidence",
            ContextMode::GraphOnly => "graph",
            ContextMode::Combined => "combined",
        }
    }

    pub fn uses_evidence(&self) -> bool {
        matches!(self, ContextMode::EvidenceOnly | ContextMode::Combined)
    }

    pub fn uses_graph(&self) -> bool {
        matches!(self, ContextMode::GraphOnly | ContextMode::Combined)
    }
}

impl std::fmt::Display for ContextMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextMode {
    type Err = DragError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "evidence" | "evidence-only" | "evidenceonly" => Ok(ContextMode::EvidenceOnly),
            "graph" | "graph-only" | "graphonly" => Ok(ContextMode::GraphOnly),
            "combined" | "both" => Ok(ContextMode::Combined),
            other => Err(DragError::InvalidInput(format!(
                "unknown context mode {other:?}; expected evidence, graph, or combined"
            ))),
        }
    }
}

/// The exact prompt payload sent to the student.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledContext {
    pub mode: ContextMode,
    pub evidence_block: Option<String>,
    pub graph_block: Option<String>,
    pub question_block: String,
    /// Full prompt text, deterministic given the blocks.
    pub rendered: String,
    /// Carried along for answer extraction; never part of `rendered` beyond
    /// the choice lines inside the question block.
    pub choices: Option<Vec<Choice>>,
}

/// The student's reply in comparable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentAnswer {
    pub raw: String,
    pub choice: Option<char>,
    pub free_text: Option<String>,
    pub token_usage: TokenUsage,
}

/// "Question: {stem}" plus one "{label}. {text}" line per choice.
pub fn render_question_block(question: &Question) -> String {
    let mut block = format!("Question: {}", question.stem);
    if let Some(choices) = &question.choices {
        for choice in choices {
            block.push_str(&format!("\n{}. {}", choice.label, choice.text));
        }
    }
    block
}

fn instruction_for(question: &Question) -> &'static str {
    if question.is_multiple_choice() {
        MCQA_INSTRUCTION
    } else {
        OPEN_INSTRUCTION
    }
}

/// The identical skeleton minus the context blocks: what the baseline
/// ("no context") column answers against.
pub fn render_baseline_prompt(question: &Question) -> String {
    format!(
        "{}\n\n{}",
        render_question_block(question),
        instruction_for(question)
    )
}

/// Concatenate the mode's blocks with the question into the student prompt.
///
/// The mode dictates which inputs must be present and non-empty; anything
/// else is a mode/input mismatch. Evidence comes first in Combined mode.
pub fn assemble_context(
    question: &Question,
    evidence: Option<&EvidenceSet>,
    triples: Option<&[RelationTriple]>,
    mode: ContextMode,
) -> Result<AssembledContext> {
    let evidence_block = match (mode.uses_evidence(), evidence) {
        (true, Some(set)) => {
            if set.filtered.is_empty() {
                return Err(DragError::InvalidInput(format!(
                    "{mode} mode requires a non-empty filtered evidence set"
                )));
            }
            let lines: Vec<String> = set
                .filtered_texts()
                .iter()
                .enumerate()
                .map(|(i, text)| format!("{}. {}", i + 1, text))
                .collect();
            Some(lines.join("\n"))
        }
        (true, None) => {
            return Err(DragError::InvalidInput(format!(
                "{mode} mode requires evidence input"
            )));
        }
        (false, Some(_)) => {
            return Err(DragError::InvalidInput(format!(
                "{mode} mode does not take evidence input"
            )));
        }
        (false, None) => None,
    };
    let graph_block = match (mode.uses_graph(), triples) {
        (true, Some(triples)) => {
            if triples.is_empty() {
                return Err(DragError::InvalidInput(format!(
                    "{mode} mode requires a non-empty triple list"
                )));
            }
            Some(render_triples(triples))
        }
        (true, None) => {
            return Err(DragError::InvalidInput(format!(
                "{mode} mode requires triple input"
            )));
        }
        (false, Some(_)) => {
            return Err(DragError::InvalidInput(format!(
                "{mode} mode does not take triple input"
            )));
        }
        (false, None) => None,
    };

    let question_block = render_question_block(question);
    let mut sections = vec![CONTEXT_HEADER.to_string()];
    if let Some(block) = &evidence_block {
        sections.push(format!("Evidence:\n{block}"));
    }
    if let Some(block) = &graph_block {
        sections.push(format!("Relationships:\n{block}"));
    }
    sections.push(question_block.clone());
    sections.push(instruction_for(question).to_string());

    Ok(AssembledContext {
        mode,
        evidence_block,
        graph_block,
        question_block,
        rendered: sections.join("\n\n"),
        choices: question.choices.clone(),
    })
}

/// Send the assembled context to the student in one deterministic call and
/// extract a comparable answer.
pub fn answer(context: &AssembledContext, student: &ChatHandle) -> Result<StudentAnswer> {
    let response = student.complete(vec![ChatMessage::user(context.rendered.clone())])?;
    Ok(interpret_raw(
        &response.content,
        context.choices.as_deref(),
        response.token_usage,
    ))
}

/// Turn a raw completion into a [`StudentAnswer`] given the question's
/// choices (if any).
pub fn interpret_raw(
    raw: &str,
    choices: Option<&[Choice]>,
    token_usage: TokenUsage,
) -> StudentAnswer {
    match choices {
        Some(choices) if !choices.is_empty() => StudentAnswer {
            raw: raw.to_string(),
            choice: extract_choice(raw, choices),
            free_text: None,
            token_usage,
        },
        _ => StudentAnswer {
            raw: raw.to_string(),
            choice: None,
            free_text: Some(raw.trim().to_string()),
            token_usage,
        },
    }
}

fn label_set(choices: &[Choice]) -> Vec<char> {
    choices
        .iter()
        .map(|c| c.label.to_ascii_lowercase())
        .collect()
}

fn normalize_text(text: &str) -> String {
    text.trim()
        .trim_end_matches(['.', '!'])
        .trim()
        .to_lowercase()
}

/// Extract the chosen label from a raw completion. First match wins, in
/// priority order: a standalone letter at the start ("a", "A.", "(a)"), an
/// "answer is X" pattern, the last standalone parenthesized letter, and
/// finally a case-insensitive comparison against the choice texts. Never
/// fails; absence is `None`.
pub fn extract_choice(raw: &str, choices: &[Choice]) -> Option<char> {
    let labels = label_set(choices);

    // Standalone letter at the start: bare letter, "A.", "b)", "c:", "(a)".
    let start = raw.trim_start();
    let mut chars = start.chars();
    match (chars.next(), chars.next(), chars.next()) {
        (Some('('), Some(letter), Some(')')) if letter.is_ascii_alphabetic() => {
            let candidate = letter.to_ascii_lowercase();
            if labels.contains(&candidate) {
                return Some(candidate);
            }
        }
        (Some(letter), next, _) if letter.is_ascii_alphabetic() => {
            let delimited = matches!(next, None | Some('.') | Some(')') | Some(':'));
            let candidate = letter.to_ascii_lowercase();
            if delimited && labels.contains(&candidate) {
                return Some(candidate);
            }
        }
        _ => {}
    }

    // "answer is X" pattern.
    static ANSWER_IS: once_cell::sync::Lazy<regex::Regex> = once_cell::sync::Lazy::new(|| {
        regex::Regex::new(r"(?i)answer\s+is\s*:?\s*\(?([A-Za-z])\)?(?:[\s.,;:]|$)").unwrap()
    });
    if let Some(caps) = ANSWER_IS.captures(raw) {
        let candidate = caps[1].chars().next().unwrap().to_ascii_lowercase();
        if labels.contains(&candidate) {
            return Some(candidate);
        }
    }

    // Last standalone parenthesized letter.
    static PAREN: once_cell::sync::Lazy<regex::Regex> =
        once_cell::sync::Lazy::new(|| regex::Regex::new(r"\(([A-Za-z])\)").unwrap());
    if let Some(candidate) = PAREN
        .captures_iter(raw)
        .filter_map(|caps| {
            let letter = caps[1].chars().next().unwrap().to_ascii_lowercase();
            labels.contains(&letter).then_some(letter)
        })
        .last()
    {
        return Some(candidate);
    }

    // Compare against the choice texts.
    let normalized = normalize_text(raw);
    choices
        .iter()
        .find(|choice| normalize_text(&choice.text) == normalized)
        .map(|choice| choice.label.to_ascii_lowercase())
}
