//! Example: the evaluation harness end-to-end, offline.
//!
//! Runs the full protocol (baseline plus a mode × K sweep) over the shipped
//! four-question corpus with scripted providers, caching every call, and
//! prints the report in both machine and table form.
//!
//! Run: `cargo run --example eval_report`

use std::sync::Arc;

use drag::fixtures::{
    worked_examples, fixture_embedder, write_fixture_bundle, FIXTURE_EVAL_K, FIXTURE_EVAL_N,
};
use drag::harness::{emit_report, run_eval, DatasetTag, EvalConfig, EvalProviders, ReportFormat};
use drag::store::FileStore;
use drag::student::ContextMode;

fn main() -> anyhow::Result<()> {
    let fixtures = worked_examples()?;
    let workdir = tempfile::tempdir()?;
    let bundle = write_fixture_bundle(&workdir.path().join("bundle"))?;
    let dataset = bundle
        .iter()
        .find(|p| p.ends_with("dataset.jsonl"))
        .expect("bundle contains the dataset")
        .clone();

    let config = EvalConfig {
        teacher_id: "teacher-sim".into(),
        student_id: "student-sim".into(),
        embedder_id: "hashed".into(),
        n: FIXTURE_EVAL_N,
        k_values: vec![FIXTURE_EVAL_K],
        modes: vec![ContextMode::EvidenceOnly],
        seed: 42,
        dataset_path: dataset,
        dataset_tag: DatasetTag::Custom,
        offline: true,
        workers: 1,
        k_graph: None,
    };
    let store = Arc::new(FileStore::open(workdir.path().join("cache"))?);
    let providers = EvalProviders {
        teacher: fixtures.teacher_handle(),
        student: fixtures.student_handle(),
        embedder: fixture_embedder(),
        store: Some(store),
    };

    let run = run_eval(&config, &providers)?;
    println!(
        "{}\n",
        emit_report(&run.report, ReportFormat::MarkdownTable)?
    );
    println!(
        "machine form:\n{}",
        emit_report(&run.report, ReportFormat::Json)?
    );

    // Rerunning hits the cache for every provider call.
    let again = run_eval(&config, &providers)?;
    assert_eq!(
        emit_report(&run.report, ReportFormat::Json)?,
        emit_report(&again.report, ReportFormat::Json)?
    );
    println!("\nrerun is byte-identical (all provider calls served from cache)");
    Ok(())
}
