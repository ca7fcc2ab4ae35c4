//! Example: context assembly in all three modes and student answering.
//!
//! Shows the exact prompt the student sees under evidence-only, graph-only,
//! and combined modes, plus the context-free baseline, and extracts the
//! chosen letter from each scripted completion.
//!
//! Run: `cargo run --example student_modes`

use drag::fixtures::worked_examples;
use drag::student::{answer, assemble_context, render_baseline_prompt, ContextMode};

fn main() -> anyhow::Result<()> {
    let fixtures = worked_examples()?;
    let question = fixtures.question("insect-metamorphosis");
    let evidence = &fixtures.insect_evidence;
    let triples = &fixtures.insect_triples;
    let student = fixtures.student_handle();

    println!("=== Baseline prompt (no context) ===");
    println!("{}\n", render_baseline_prompt(question));

    let combined = assemble_context(
        question,
        Some(evidence),
        Some(triples),
        ContextMode::Combined,
    )?;
    println!("=== Combined prompt ===");
    println!("{}\n", combined.rendered);

    for (label, context) in [
        (
            "evidence-only",
            assemble_context(question, Some(evidence), None, ContextMode::EvidenceOnly)?,
        ),
        (
            "graph-only",
            assemble_context(question, None, Some(triples), ContextMode::GraphOnly)?,
        ),
    ] {
        println!(
            "{label}: evidence block present = {}, graph block present = {}",
            context.evidence_block.is_some(),
            context.graph_block.is_some()
        );
    }

    let student_answer = answer(&combined, &student)?;
    println!(
        "\nStudent said {:?} -> extracted choice {:?} (gold {:?})",
        student_answer.raw, student_answer.choice, question.gold
    );
    Ok(())
}
