//! Distillation of retrieval-augmented generation from a large teacher LLM
//! into prompt context for a small student model.
//!
//! Instead of retrieving documents from a corpus, the teacher model *is* the
//! retriever: it generates candidate evidence statements for a question, which
//! are then ranked by a fused semantic + LLM score, distilled into
//! knowledge-graph triples, and handed to the student as compact context.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`providers`] — chat-completion and embedding backends (scripted mocks,
//!   a deterministic procedural backend, and an HTTP client), plus the pinned
//!   prompt templates every stage uses.
//! - [`evidence`] — evidence generation, cosine scoring, LLM ranking with a
//!   deterministic repair rule, score fusion, and top-K filtering.
//! - [`graph`] — relationship-triple extraction, multigraph construction,
//!   triple ranking, and simple-graph aggregation of parallel edges.
//! - [`student`] — context assembly (evidence / graph / combined), student
//!   querying, and answer extraction.
//! - [`privacy`] — synthetic PII injection, query redaction, residual-PII
//!   detection, and the relay flow that keeps private text off the wire.
//! - [`harness`] — dataset loading, (mode, K) sweeps, accuracy and token
//!   statistics, and report emission.
//! - [`store`] — content-addressed cache of provider outputs so runs are
//!   reproducible and resumable.
//! - [`config`] / [`cli`] — configuration merging and the subcommands the
//!   `drag` binary exposes.
//!
//! The `examples/` directory contains one runnable example per capability;
//! everything runs offline against the shipped fixture bundle.

pub mod cli;
pub mod config;
pub mod error;
pub mod evidence;
pub mod fixtures;
pub mod graph;
pub mod harness;
pub mod privacy;
pub mod providers;
pub mod store;
pub mod student;

pub use error::{DragError, Result};
