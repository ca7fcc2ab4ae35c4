//! Example: triple extraction, multigraph construction, ranking, and
//! simple-graph aggregation.
//!
//! Distills the filtered evidences of the worked example into relationship
//! triples, shows the multigraph/simple-graph split, and compares token
//! counts between evidence and graph representations.
//!
//! Run: `cargo run --example graph_distillation`

use drag::fixtures::worked_examples;
use drag::graph::{aggregate_simple_graph, build_multigraph, render_triples, RelationTriple};
use drag::harness::token_statistics;
use drag::providers::mock::ProceduralProvider;
use drag::providers::ChatHandle;
use std::sync::Arc;

fn main() -> anyhow::Result<()> {
    let fixtures = worked_examples()?;
    let ranked = &fixtures.insect_triples;

    println!("Top-ranked relationship triples:");
    println!("{}\n", render_triples(ranked));

    // Parallel edges between one entity pair merge into a single summarized
    // edge; the procedural backend stands in for the teacher here.
    let parallel = vec![
        RelationTriple::new(
            "nymphs",
            "adults",
            "Nymphs transition directly into adults.",
            1,
        )?,
        RelationTriple::new("nymphs", "adults", "Nymphs resemble the adult stage.", 2)?,
        RelationTriple::new(
            "nymphs",
            "incomplete metamorphosis",
            "Nymphs are a characteristic of incomplete metamorphosis.",
            2,
        )?,
    ];
    let multigraph = build_multigraph(&parallel);
    println!(
        "Multigraph: {} nodes, {} edges (parallel allowed)",
        multigraph.node_count(),
        multigraph.edge_count()
    );
    println!("{}\n", multigraph.to_json());

    let teacher = ChatHandle::new(Arc::new(ProceduralProvider::new()), "aggregator");
    let simple = aggregate_simple_graph(&multigraph, &teacher)?;
    println!(
        "Simple graph: {} nodes, {} edges (one per unordered pair)",
        simple.node_count(),
        simple.edge_count()
    );
    println!("{}\n", simple.to_json());

    // The graph representation is the compact one.
    let evidence_texts = fixtures.insect_evidence.filtered_texts();
    let triple_lines: Vec<String> = ranked
        .iter()
        .map(|t| render_triples(std::slice::from_ref(t)))
        .collect();
    let stats = token_statistics(&evidence_texts, &triple_lines);
    println!(
        "Mean whitespace tokens — evidence: {:.2}, graph: {:.2}",
        stats.evidence.mean_length, stats.graph.mean_length
    );
    Ok(())
}
