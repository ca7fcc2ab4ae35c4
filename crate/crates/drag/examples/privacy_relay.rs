//! Example: the privacy-preserving relay flow.
//!
//! A question carrying synthetic PII is redacted locally, the cloud teacher
//! retrieves evidence and a graph for the redacted form only (a guard blocks
//! any payload still containing an injected surface), and the local student
//! answers the original question with the returned context.
//!
//! Run: `cargo run --example privacy_relay`

use drag::fixtures::{worked_examples, fixture_embedder, relay_config};
use drag::privacy::{detect_residual_pii, relay_answer, Redactor};

fn main() -> anyhow::Result<()> {
    let fixtures = worked_examples()?;
    let embedder = fixture_embedder();
    let teacher = fixtures.teacher_handle();
    let student = fixtures.student_handle();
    // The local student doubles as the redactor.
    let redactor = Redactor::Chat(fixtures.student_handle());

    for record in &fixtures.privacy_records {
        let config = relay_config(&record.original.id).expect("relay example");
        println!("=== {} ===", record.original.id);
        println!("user question (private): {}", record.augmented_stem);
        println!(
            "injected surfaces: {:?}",
            record
                .injected
                .iter()
                .map(|s| s.surface.as_str())
                .collect::<Vec<_>>()
        );

        let outcome = relay_answer(record, &redactor, &teacher, &student, &embedder, &config)?;
        println!("sent to the cloud:       {}", outcome.redacted_stem);

        let leaks = outcome.transmissions.count_containing(
            &record
                .injected
                .iter()
                .map(|s| s.surface.clone())
                .collect::<Vec<_>>(),
        );
        println!(
            "teacher-bound payloads: {} transmitted, {} containing injected PII",
            outcome.transmissions.payloads().len(),
            leaks
        );
        let residual = detect_residual_pii(&outcome.redacted_stem, &record.injected);
        println!("residual spans in redacted stem: {}", residual.len());
        println!(
            "local answer: {:?} -> choice {:?} (gold {:?})\n",
            outcome.answer.raw, outcome.answer.choice, record.original.gold
        );
    }
    Ok(())
}
