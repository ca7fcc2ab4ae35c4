//! Example: evidence generation, scoring, fusion, and top-K filtering.
//!
//! Runs the first two pipeline steps offline against the scripted fixture
//! corpus: the teacher generates candidate evidences, each is scored by
//! cosine similarity and teacher rank, and the fused score keeps the top K.
//!
//! Run: `cargo run --example evidence_pipeline`

use drag::evidence::build_evidence_set;
use drag::fixtures::{worked_examples, fixture_embedder, FIXTURE_EVAL_K, FIXTURE_EVAL_N};

fn main() -> anyhow::Result<()> {
    let fixtures = worked_examples()?;
    let question = fixtures.question("insect-metamorphosis");
    let teacher = fixtures.teacher_handle();
    let embedder = fixture_embedder();

    println!("Question: {}\n", question.stem);

    let set = build_evidence_set(
        question,
        FIXTURE_EVAL_N,
        FIXTURE_EVAL_K,
        &teacher,
        &embedder,
    )?;

    println!("{} candidates, keeping top {}:", set.items.len(), set.k);
    for item in &set.items {
        println!(
            "  [{}] sim {:+.3}  rank {}  fused {:.3}  {}…",
            item.evidence.index,
            item.sim_score,
            item.llm_rank,
            item.fused_score,
            item.evidence.text.chars().take(60).collect::<String>(),
        );
    }

    println!("\nFiltered order (best first): {:?}", set.filtered);
    for (rank, text) in set.filtered_texts().iter().enumerate() {
        println!("  {}. {}", rank + 1, text);
    }

    println!("\nSerialized EvidenceSet:\n{}", set.to_json());
    Ok(())
}
