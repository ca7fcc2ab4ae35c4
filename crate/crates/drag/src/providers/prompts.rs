//! Prompt templates for every pipeline stage.
//!
//! These strings are part of the crate's contract: fixtures and caches key on
//! the rendered bytes, so any edit here invalidates shipped fixtures. Golden
//! tests pin each template byte-for-byte.

use crate::providers::{ChatMessage, ProviderError};

/// System prompt for teacher evidence generation.
pub const EVIDENCE_SYSTEM_PROMPT: &str = "You are an assistant in charge of generating factual evidence statements that aid in solving the provided question. Provide only the evidence statements with no additional remarks. Do not give the answer away directly.";

/// System prompt for merging parallel graph edges into one statement.
pub const AGGREGATION_SYSTEM_PROMPT: &str = "You are an assistant in charge of combining the provided statements into one summarized statement. Be concise without losing any of the information.";

/// System prompt for relevance ranking of evidence statements or rendered
/// triples.
pub const RANKING_SYSTEM_PROMPT: &str = "You are an assistant in charge of ranking the provided evidence statements by relevance to the question. Output a comma-separated permutation of the evidence numbers from most to least relevant, nothing else.";

/// System prompt for relationship-triple extraction.
pub const TRIPLE_SYSTEM_PROMPT: &str = "You are an assistant in charge of extracting entity relationship triples from the provided statement. Output one triple per line in the form (entity one | entity two | relationship sentence). Provide only the triples with no additional remarks.";

/// System prompt for the local redaction pass.
pub const REDACTION_SYSTEM_PROMPT: &str = "You are an assistant in charge of rewriting the provided question to remove personal names, email addresses, physical addresses, affiliations, and phone numbers while preserving the original meaning of the question. Provide only the rewritten question with no additional remarks.";

/// System prompt for synthetic PII injection during benchmark construction.
pub const INJECTION_SYSTEM_PROMPT: &str = "You are an assistant in charge of rewriting the provided question so that it naturally mentions the provided personal details. Keep the question answerable, keep its meaning intact, and include every detail verbatim. Provide only the rewritten question with no additional remarks.";

/// Render items as a numbered list, one per line, counting from 1.
pub fn numbered_lines<S: AsRef<str>>(items: &[S]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}. {}", i + 1, item.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Messages asking the teacher for `n` evidence statements about `question`.
///
/// The template is applied literally; there is no pluralization logic.
pub fn evidence_messages(question: &str, n: u32) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(EVIDENCE_SYSTEM_PROMPT),
        ChatMessage::user(format!(
            "Generate {n} evidences that pertain to answering the following question: {question}"
        )),
    ]
}

/// Messages asking the teacher to merge ≥ 2 statements into one.
pub fn aggregation_messages<S: AsRef<str>>(
    statements: &[S],
) -> Result<Vec<ChatMessage>, ProviderError> {
    if statements.len() < 2 {
        return Err(ProviderError::InvalidRequest(format!(
            "aggregation needs at least 2 statements, got {}",
            statements.len()
        )));
    }
    Ok(vec![
        ChatMessage::system(AGGREGATION_SYSTEM_PROMPT),
        ChatMessage::user(numbered_lines(statements)),
    ])
}

/// Messages asking the teacher to rank numbered items against a question.
pub fn ranking_messages<S: AsRef<str>>(question: &str, items: &[S]) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(RANKING_SYSTEM_PROMPT),
        ChatMessage::user(format!(
            "Question: {question}\n\nEvidences:\n{}",
            numbered_lines(items)
        )),
    ]
}

/// Messages asking the teacher to extract triples from one evidence statement.
pub fn triple_messages(evidence_text: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(TRIPLE_SYSTEM_PROMPT),
        ChatMessage::user(evidence_text.to_string()),
    ]
}

/// Messages asking the local model to strip PII from a question.
pub fn redaction_messages(stem: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(REDACTION_SYSTEM_PROMPT),
        ChatMessage::user(stem.to_string()),
    ]
}

/// Messages asking a model to weave the given personal details into a stem.
/// `details` pairs a kind label ("name", "email", ...) with the surface text.
pub fn injection_messages(stem: &str, details: &[(String, String)]) -> Vec<ChatMessage> {
    let detail_lines = details
        .iter()
        .map(|(kind, surface)| format!("- {kind}: {surface}"))
        .collect::<Vec<_>>()
        .join("\n");
    vec![
        ChatMessage::system(INJECTION_SYSTEM_PROMPT),
        ChatMessage::user(format!("Question: {stem}\n\nDetails:\n{detail_lines}")),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::Role;

    #[test]
    fn evidence_prompt_matches_golden_strings() {
        let messages = evidence_messages("Why is the sky blue?", 5);
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[0].role, Role::System);
        assert_eq!(
            messages[0].content,
            "You are an assistant in charge of generating factual evidence statements that aid in solving the provided question. Provide only the evidence statements with no additional remarks. Do not give the answer away directly."
        );
        assert_eq!(
            messages[1].content,
            "Generate 5 evidences that pertain to answering the following question: Why is the sky blue?"
        );
    }

    #[test]
    fn evidence_prompt_is_literal_for_n_equals_one() {
        let messages = evidence_messages("q", 1);
        assert_eq!(
            messages[1].content,
            "Generate 1 evidences that pertain to answering the following question: q"
        );
    }

    #[test]
    fn evidence_system_message_is_constant_across_inputs() {
        let a = evidence_messages("first question", 2);
        let b = evidence_messages("another one entirely", 20);
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn aggregation_prompt_matches_golden_strings() {
        let messages =
            aggregation_messages(&["Nymphs molt repeatedly.", "Nymphs resemble adults."]).unwrap();
        assert_eq!(
            messages[0].content,
            "You are an assistant in charge of combining the provided statements into one summarized statement. Be concise without losing any of the information."
        );
        assert!(messages[0]
            .content
            .contains("Be concise without losing any of the information."));
        assert_eq!(
            messages[1].content,
            "1. Nymphs molt repeatedly.\n2. Nymphs resemble adults."
        );
    }

    #[test]
    fn aggregation_rejects_single_statement() {
        assert!(aggregation_messages(&["only one"]).is_err());
    }

    #[test]
    fn ranking_prompt_numbers_items_from_one() {
        let messages = ranking_messages("Q?", &["first", "second"]);
        assert_eq!(
            messages[1].content,
            "Question: Q?\n\nEvidences:\n1. first\n2. second"
        );
        assert!(messages[0]
            .content
            .contains("comma-separated permutation of the evidence numbers"));
    }

    #[test]
    fn injection_prompt_lists_details() {
        let details = vec![
            ("name".to_string(), "Dr. A. Person".to_string()),
            ("email".to_string(), "a@b.c".to_string()),
        ];
        let messages = injection_messages("What is X?", &details);
        assert_eq!(
            messages[1].content,
            "Question: What is X?\n\nDetails:\n- name: Dr. A. Person\n- email: a@b.c"
        );
    }
}
