//! Subcommand implementations behind the `drag` binary.
//!
//! Outputs land under the `--out` directory: `evidence/` from `generate`,
//! `graph/` from `graph`, `report.json` / `report.md` / `answers.jsonl` from
//! `eval`, and `privacy_bench.jsonl` / `privacy_metrics.json` from
//! `privacy-bench`. All chat calls are checkpointed through the cache
//! directory, so reruns are free and interrupted runs resume.

use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use crate::config::{build_providers, CliConfig, ProviderSpec};
use crate::error::{DragError, Result};
use crate::evidence::{build_evidence_set, EvidenceSet};
use crate::fixtures;
use crate::graph::{aggregate_simple_graph, build_multigraph, extract_triples};
use crate::harness::{self, emit_report, load_dataset, run_eval, EvalProviders, ReportFormat};
use crate::privacy::{detect_residual_pii, inject_pii, pii_reduction_rate, Redactor};
use crate::providers::ChatHandle;
use crate::store::{canonical_json, CachingChatProvider, FileStore};

/// Outcome of a file-producing subcommand.
#[derive(Debug, Default, Serialize)]
pub struct CmdReport {
    pub written: Vec<PathBuf>,
    /// (question id, error) pairs for per-question terminal errors.
    pub failures: Vec<(String, String)>,
}

impl CmdReport {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cached_handle(handle: &ChatHandle, store: &Arc<FileStore>) -> ChatHandle {
    handle.with_provider(Arc::new(CachingChatProvider::new(
        handle.provider().clone(),
        store.clone(),
    )))
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text.as_bytes())?;
    Ok(())
}

/// Steps 1–2 per question: generate, score, fuse, filter; one EvidenceSet
/// file per question under `out/evidence/`. K is the first configured value.
pub fn cmd_generate(config: &CliConfig) -> Result<CmdReport> {
    let dataset = config.require_dataset()?;
    let records = load_dataset(dataset, config.dataset_tag)?;
    let store = Arc::new(FileStore::open(&config.cache_dir)?);
    let providers = build_providers(config)?;
    let teacher = cached_handle(&providers.teacher, &store);
    let k = config.k[0];

    let mut report = CmdReport::default();
    for record in &records {
        match build_evidence_set(&record.question, config.n, k, &teacher, &providers.embedder) {
            Ok(set) => {
                let path = config
                    .out
                    .join("evidence")
                    .join(format!("{}.json", sanitize_id(&record.question.id)));
                write_text(&path, &set.to_json())?;
                report.written.push(path);
            }
            Err(err) if harness::aborts_run(&err) => return Err(err),
            Err(err) => {
                log::error!("question {}: {err}", record.question.id);
                report
                    .failures
                    .push((record.question.id.clone(), err.to_string()));
            }
        }
    }
    Ok(report)
}

/// Step 3 per question: triples from the filtered evidences, a multigraph,
/// and its simple-graph aggregation, written under `out/graph/`.
pub fn cmd_graph(config: &CliConfig) -> Result<CmdReport> {
    let evidence_dir = config.out.join("evidence");
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&evidence_dir)
        .map_err(|e| {
            DragError::Config(format!(
                "no evidence files at {} (run generate first): {e}",
                evidence_dir.display()
            ))
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|path| path.extension().is_some_and(|ext| ext == "json"))
        .collect();
    entries.sort();

    let store = Arc::new(FileStore::open(&config.cache_dir)?);
    let providers = build_providers(config)?;
    let teacher = cached_handle(&providers.teacher, &store);

    let mut report = CmdReport::default();
    for path in entries {
        let set = EvidenceSet::from_json(&std::fs::read_to_string(&path)?)?;
        let id = sanitize_id(&set.question_id);
        let outcome: Result<(String, String)> = (|| {
            let mut filtered = set.filtered_evidences();
            filtered.sort_by_key(|e| e.index);
            if filtered.is_empty() {
                log::warn!("question {}: empty filtered evidence, empty graphs", id);
            }
            let mut triples = Vec::new();
            for evidence in filtered {
                triples.extend(extract_triples(evidence, &teacher)?);
            }
            let multigraph = build_multigraph(&triples);
            let simple = aggregate_simple_graph(&multigraph, &teacher)?;
            Ok((multigraph.to_json(), simple.to_json()))
        })();
        match outcome {
            Ok((multi_json, simple_json)) => {
                let multi_path = config
                    .out
                    .join("graph")
                    .join(format!("{id}.multigraph.json"));
                let simple_path = config
                    .out
                    .join("graph")
                    .join(format!("{id}.simplegraph.json"));
                write_text(&multi_path, &multi_json)?;
                write_text(&simple_path, &simple_json)?;
                report.written.push(multi_path);
                report.written.push(simple_path);
            }
            Err(err) if harness::aborts_run(&err) => return Err(err),
            Err(err) => {
                log::error!("question {id}: {err}");
                report
                    .failures
                    .push((set.question_id.clone(), err.to_string()));
            }
        }
    }
    Ok(report)
}

/// Artifacts of an evaluation run.
pub struct EvalArtifacts {
    pub report: harness::EvalReport,
    pub report_json: PathBuf,
    pub report_markdown: PathBuf,
    pub answers_jsonl: PathBuf,
}

impl EvalArtifacts {
    /// Terminal per-question errors recorded during the run.
    pub fn failed_cells(&self) -> usize {
        self.report.baseline.failed
            + self
                .report
                .cells
                .iter()
                .map(|cell| cell.stats.failed)
                .sum::<usize>()
    }
}

/// The full protocol: baseline plus every (mode, K) cell, aggregated into a
/// JSON report, a markdown table, and per-question answer records.
pub fn cmd_eval(config: &CliConfig) -> Result<EvalArtifacts> {
    let eval_config = config.eval_config()?;
    let store = Arc::new(FileStore::open(&config.cache_dir)?);
    let providers = build_providers(config)?;
    let run = run_eval(
        &eval_config,
        &EvalProviders {
            teacher: providers.teacher,
            student: providers.student,
            embedder: providers.embedder,
            store: Some(store),
        },
    )?;

    let report_json = config.out.join("report.json");
    let report_markdown = config.out.join("report.md");
    let answers_jsonl = config.out.join("answers.jsonl");
    write_text(&report_json, &emit_report(&run.report, ReportFormat::Json)?)?;
    write_text(
        &report_markdown,
        &emit_report(&run.report, ReportFormat::MarkdownTable)?,
    )?;
    write_text(&answers_jsonl, &harness::answers_to_jsonl(&run.answers)?)?;
    Ok(EvalArtifacts {
        report: run.report,
        report_json,
        report_markdown,
        answers_jsonl,
    })
}

/// Artifacts of privacy-benchmark construction.
#[derive(Debug, Serialize)]
pub struct PrivacyArtifacts {
    pub records_jsonl: PathBuf,
    pub metrics_json: PathBuf,
    pub total_injected: usize,
    pub total_residual: usize,
    pub reduction_rate: f64,
    pub skipped: usize,
}

/// Build the PII-augmented benchmark: inject synthetic PII into every source
/// question, redact, measure residual spans, and write the benchmark JSONL
/// plus a metrics JSON.
pub fn cmd_privacy_bench(config: &CliConfig) -> Result<PrivacyArtifacts> {
    let dataset = config.require_dataset()?;
    let records = load_dataset(dataset, config.dataset_tag)?;
    let store = Arc::new(FileStore::open(&config.cache_dir)?);
    let providers = build_providers(config)?;
    let teacher = cached_handle(&providers.teacher, &store);
    let pools = fixtures::builtin_pii_pools()?;

    // A procedural student cannot answer redaction prompts; everything else
    // redacts through the local student model.
    let redactor = match config.student_spec {
        ProviderSpec::Procedural => Redactor::RuleBased,
        _ => Redactor::Chat(cached_handle(&providers.student, &store)),
    };

    let mut privacy_records = Vec::new();
    let mut skipped = 0usize;
    for record in &records {
        match inject_pii(&record.question, &teacher, config.seed, &pools) {
            Ok(mut privacy_record) => {
                privacy_record.redacted_stem =
                    redactor.redact(&privacy_record.augmented_stem, &privacy_record.injected)?;
                privacy_record.residual =
                    detect_residual_pii(&privacy_record.redacted_stem, &privacy_record.injected);
                privacy_records.push(privacy_record);
            }
            Err(err) if harness::aborts_run(&err) => return Err(err),
            Err(err) => {
                log::warn!("question {}: injection skipped ({err})", record.question.id);
                skipped += 1;
            }
        }
    }

    let reduction_rate = pii_reduction_rate(&privacy_records)?;
    let total_injected: usize = privacy_records.iter().map(|r| r.injected.len()).sum();
    let total_residual: usize = privacy_records.iter().map(|r| r.residual.len()).sum();

    let mut rows = String::new();
    for record in &privacy_records {
        rows.push_str(&canonical_json(&record.to_row()));
        rows.push('\n');
    }
    let records_jsonl = config.out.join("privacy_bench.jsonl");
    let metrics_json = config.out.join("privacy_metrics.json");
    write_text(&records_jsonl, &rows)?;
    write_text(
        &metrics_json,
        &canonical_json(&json!({
            "total_injected": total_injected,
            "total_residual": total_residual,
            "reduction_rate": reduction_rate,
        })),
    )?;
    Ok(PrivacyArtifacts {
        records_jsonl,
        metrics_json,
        total_injected,
        total_residual,
        reduction_rate,
        skipped,
    })
}
