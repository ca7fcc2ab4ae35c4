//! Example: regenerable synthetic privacy benchmark with reduction metrics.
//!
//! Generates synthetic questions, injects 1–3 PII items per question from
//! the shipped pools (deterministic in the seed), redacts with the
//! rule-based scrub, and measures the residual-PII reduction rate.
//!
//! Run: `cargo run --example privacy_benchmark`

use std::sync::Arc;

use drag::fixtures::{builtin_pii_pools, synthetic_questions};
use drag::privacy::{detect_residual_pii, inject_pii, pii_reduction_rate, redact_rule_based};
use drag::providers::mock::ProceduralProvider;
use drag::providers::ChatHandle;

fn main() -> anyhow::Result<()> {
    let seed = 42;
    let questions = synthetic_questions(25, seed);
    let pools = builtin_pii_pools()?;
    let teacher = ChatHandle::new(Arc::new(ProceduralProvider::new()), "injector");

    let mut records = Vec::new();
    for question in &questions {
        let mut record = inject_pii(question, &teacher, seed, &pools)?;
        record.redacted_stem = redact_rule_based(&record.augmented_stem, &record.injected);
        record.residual = detect_residual_pii(&record.redacted_stem, &record.injected);
        records.push(record);
    }

    for record in records.iter().take(3) {
        println!("original:  {}", record.original.stem);
        println!("augmented: {}", record.augmented_stem);
        println!("redacted:  {}", record.redacted_stem);
        println!(
            "injected {} span(s), residual {}\n",
            record.injected.len(),
            record.residual.len()
        );
    }

    let injected: usize = records.iter().map(|r| r.injected.len()).sum();
    let residual: usize = records.iter().map(|r| r.residual.len()).sum();
    println!(
        "{} questions, {} injected spans, {} residual, reduction rate {:.4}",
        records.len(),
        injected,
        residual,
        pii_reduction_rate(&records)?
    );
    Ok(())
}
