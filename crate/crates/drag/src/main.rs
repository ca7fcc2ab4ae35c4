//! `drag` — evidence and graph distillation pipeline CLI.
//!
//! Thin wrapper over the library: parses flags, merges them with the config
//! file and defaults, and dispatches to the `cli` module. Machine-readable
//! JSON summaries by default; `--pretty` for humans. Secrets are read from
//! the environment only.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use drag::config::{CliConfig, CliOverrides, FileConfig};
use drag::error::Result;
use drag::harness::DatasetTag;
use drag::store::canonical_json;
use drag::student::ContextMode;

#[derive(Parser)]
#[command(
    name = "drag",
    about = "Distill teacher-generated evidence and knowledge graphs into prompts for a small student model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, rank, and filter evidence; one EvidenceSet file per question.
    Generate(CommonArgs),
    /// Extract triples from evidence files and build multi/simple graphs.
    Graph(CommonArgs),
    /// Run the evaluation protocol and emit report files.
    Eval(CommonArgs),
    /// Construct the PII-augmented benchmark and measure reduction.
    PrivacyBench(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset JSONL path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Dataset kind: arc_c|mmlu|medmcqa|gpqa|open_llm|averitec|privacy_bench|custom.
    #[arg(long)]
    dataset_tag: Option<String>,
    /// Teacher model id.
    #[arg(long)]
    teacher: Option<String>,
    /// Student model id.
    #[arg(long)]
    student: Option<String>,
    /// Embedder model id.
    #[arg(long)]
    embedder: Option<String>,
    /// Evidences to generate per question.
    #[arg(long)]
    n: Option<u32>,
    /// Retrieval sizes, comma separated (e.g. 3,5,10).
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<u32>>,
    /// Context modes, comma separated: evidence|graph|combined.
    #[arg(long = "mode", value_delimiter = ',')]
    mode: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cache directory (default: $DRAG_CACHE_DIR or .drag-cache).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Forbid network providers; scripted/procedural backends only.
    #[arg(long)]
    offline: bool,
    /// Question-level parallelism (default 1 for reproducible logs).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relationship budget for graph modes (defaults to K).
    #[arg(long)]
    k_graph: Option<u32>,
    /// Human-oriented output instead of JSON.
    #[arg(long)]
    pretty: bool,
}

impl CommonArgs {
    fn resolve(&self) -> Result<CliConfig> {
        let file = match &self.config {
            Some(path) => Some((path.as_path(), FileConfig::load(path)?)),
            None => None,
        };
        let modes = self
            .mode
            .as_ref()
            .map(|names| {
                names
                    .iter()
                    .map(|name| name.parse::<ContextMode>())
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let dataset_tag = self
            .dataset_tag
            .as_ref()
            .map(|name| name.parse::<DatasetTag>())
            .transpose()?;
        CliConfig::resolve(
            file,
            CliOverrides {
                teacher: self.teacher.clone(),
                student: self.student.clone(),
                embedder: self.embedder.clone(),
                n: self.n,
                k: self.k.clone(),
                modes,
                seed: self.seed,
                dataset: self.dataset.clone(),
                dataset_tag,
                out: self.out.clone(),
                cache_dir: self.cache_dir.clone(),
                offline: self.offline,
                workers: self.workers,
                k_graph: self.k_graph,
            },
        )
    }
}

fn paths_json(paths: &[PathBuf]) -> serde_json::Value {
    json!(paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>())
}

fn run(command: &Command) -> Result<(serde_json::Value, String, bool)> {
    match command {
        Command::Generate(args) => {
            let config = args.resolve()?;
            let report = drag::cli::cmd_generate(&config)?;
            let summary = json!({
                "command": "generate",
                "written": paths_json(&report.written),
                "failures": report.failures,
            });
            let pretty = format!(
                "generate: {} evidence file(s) written, {} failure(s)",
                report.written.len(),
                report.failures.len()
            );
            Ok((summary, pretty, report.succeeded()))
        }
        Command::Graph(args) => {
            let config = args.resolve()?;
            let report = drag::cli::cmd_graph(&config)?;
            let summary = json!({
                "command": "graph",
                "written": paths_json(&report.written),
                "failures": report.failures,
            });
            let pretty = format!(
                "graph: {} graph file(s) written, {} failure(s)",
                report.written.len(),
                report.failures.len()
            );
            Ok((summary, pretty, report.succeeded()))
        }
        Command::Eval(args) => {
            let config = args.resolve()?;
            let artifacts = drag::cli::cmd_eval(&config)?;
            let failed = artifacts.failed_cells();
            let summary = json!({
                "command": "eval",
                "report_json": artifacts.report_json.display().to_string(),
                "report_markdown": artifacts.report_markdown.display().to_string(),
                "answers_jsonl": artifacts.answers_jsonl.display().to_string(),
                "baseline_accuracy": artifacts.report.baseline_accuracy,
                "cells": artifacts.report.cells,
                "failed_outcomes": failed,
            });
            let pretty = format!(
                "eval: {} question(s), baseline {:.2}%, reports at {}\n{}",
                artifacts.report.dataset_size,
                artifacts.report.baseline_accuracy * 100.0,
                artifacts.report_json.display(),
                drag::harness::emit_report(
                    &artifacts.report,
                    drag::harness::ReportFormat::MarkdownTable
                )?,
            );
            Ok((summary, pretty, failed == 0))
        }
        Command::PrivacyBench(args) => {
            let config = args.resolve()?;
            let artifacts = drag::cli::cmd_privacy_bench(&config)?;
            let ok = artifacts.skipped == 0;
            let pretty = format!(
                "privacy-bench: {} injected, {} residual, reduction {:.4}, {} skipped",
                artifacts.total_injected,
                artifacts.total_residual,
                artifacts.reduction_rate,
                artifacts.skipped
            );
            let summary = serde_json::to_value(&artifacts)?;
            Ok((summary, pretty, ok))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pretty_flag = match &cli.command {
        Command::Generate(args)
        | Command::Graph(args)
        | Command::Eval(args)
        | Command::PrivacyBench(args) => args.pretty,
    };
    match run(&cli.command) {
        Ok((summary, pretty, ok)) => {
            if pretty_flag {
                println!("{pretty}");
            } else {
                println!("{}", canonical_json(&summary));
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
