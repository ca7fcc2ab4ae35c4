//! Deterministic offline corpora.
//!
//! Four worked-example questions ship with scripted teacher and student
//! fixtures covering every pipeline stage: evidence generation and ranking,
//! triple extraction and graph ranking, baseline and contextual answering,
//! PII injection and redaction for the relay flow. The fixtures are built by
//! simulating the pipeline stage by stage with the crate's own renderers, so
//! every scripted request fingerprint matches what the pipeline will send.
//!
//! `write_fixture_bundle` serializes the whole set (plus a ready-to-run
//! config) for the CLI; the shipped copy under `fixtures/worked/` is kept
//! in sync by a test and regenerable with `cargo run --example regen_fixtures`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::evidence::{build_evidence_set, Choice, EvidenceSet, Question};
use crate::graph::{distill_triples, RelationTriple};
use crate::privacy::{draw_details, PiiKind, PiiPools, PiiSpan, PrivacyRecord, RelayConfig};
use crate::providers::mock::{HashedEmbedder, ScriptedChatProvider, ScriptedFixture};
use crate::providers::{prompts, ChatHandle, ChatMessage, EmbeddingProvider};
use crate::store::canonical_json;
use crate::student::{assemble_context, render_baseline_prompt, ContextMode};

pub const FIXTURE_TEACHER_MODEL: &str = "teacher-sim";
pub const FIXTURE_STUDENT_MODEL: &str = "student-sim";
pub const FIXTURE_EMBED_DIM: usize = 4096;
/// The eval fixture sweep: N=5 evidences, keep K=3, evidence-only mode.
pub const FIXTURE_EVAL_N: u32 = 5;
pub const FIXTURE_EVAL_K: u32 = 3;
pub const FIXTURE_SEED: u64 = 42;

const POOLS_JSON: &str = include_str!("../fixtures/pii_pools.json");

/// The shipped synthetic PII pools.
pub fn builtin_pii_pools() -> Result<PiiPools> {
    Ok(serde_json::from_str(POOLS_JSON)?)
}

/// The embedder every fixture flow uses.
pub fn fixture_embedder() -> Arc<dyn EmbeddingProvider> {
    Arc::new(HashedEmbedder::new(FIXTURE_EMBED_DIM))
}

struct RelaySpec {
    augmented_stem: &'static str,
    injected: &'static [(PiiKind, &'static str)],
    redacted_stem: &'static str,
    config: RelayConfig,
}

struct GraphSpec {
    /// Triple-extraction completions per filtered evidence, ascending
    /// evidence index.
    extractions: &'static [&'static str],
    ranking: &'static str,
    k: u32,
}

struct ExampleSpec {
    id: &'static str,
    stem: &'static str,
    choices: &'static [&'static str],
    gold: char,
    subject: &'static str,
    evidences: &'static [&'static str],
    ranking: &'static str,
    baseline_answer: &'static str,
    context_answer: &'static str,
    /// Triple-extraction completions for the eval-path filtered evidences
    /// (ascending evidence index), so the graph subcommand runs on the whole
    /// bundle. A completion with no pipe-delimited line yields no edges.
    eval_extractions: &'static [&'static str],
    graph: Option<GraphSpec>,
    relay: Option<RelaySpec>,
}

const INSECT: ExampleSpec = ExampleSpec {
    id: "insect-metamorphosis",
    stem: "Which term best describes the life cycle of an insect that reaches the adult stage without being a pupa?",
    choices: &[
        "Incomplete metamorphosis",
        "Complete metamorphosis",
        "Alternation of generations",
        "Spontaneous mutation",
    ],
    gold: 'a',
    subject: "biology",
    evidences: &[
        "Incomplete metamorphosis, also known as hemimetabolism, is a type of insect development where the immature stages (nymphs) resemble the adult but lack fully developed wings and reproductive structures.",
        "Insects undergoing incomplete metamorphosis do not have a pupal stage; they transition directly from nymphs to adults.",
        "The nymphs gradually grow larger, molting multiple times until they become adults, which is a hallmark of incomplete metamorphosis.",
        "Common insects like grasshoppers, crickets, cockroaches, and dragonflies exhibit incomplete metamorphosis, all bypassing the pupal stage.",
        "Complete metamorphosis (holometabolism) involves four distinct stages: egg, larva, pupa, and adult. The presence of a pupal stage clearly differentiates it from incomplete metamorphosis.",
    ],
    // Most relevant first: evidence 3, then 1, then 2.
    ranking: "3, 1, 2, 4, 5",
    baseline_answer: "Complete metamorphosis (b)",
    context_answer: "Incomplete metamorphosis (a)",
    eval_extractions: &[
        "(Incomplete metamorphosis | hemimetabolism | Incomplete metamorphosis is also known as hemimetabolism.)",
        "(nymphs | adults | Nymphs transition directly into adults, and resemble the adult stage.)",
        "(nymphs | incomplete metamorphosis | Nymphs are a characteristic of incomplete metamorphosis.)",
    ],
    graph: Some(GraphSpec {
        extractions: &[
            "(Incomplete metamorphosis | hemimetabolism | Incomplete metamorphosis is also known as hemimetabolism.)",
            "(nymphs | adults | Nymphs transition directly into adults, and resemble the adult stage.)",
            "(nymphs | incomplete metamorphosis | Nymphs are a characteristic of incomplete metamorphosis.)",
        ],
        ranking: "2, 3, 1",
        k: 2,
    }),
    relay: None,
};

const GLUCONEOGENESIS: ExampleSpec = ExampleSpec {
    id: "gluconeogenesis-substrates",
    stem: "Which of the following amino acids cannot provide a substrate for gluconeogenesis?",
    choices: &[
        "Leucine and lysine",
        "Alanine and glycine",
        "Aspartate and glutamate",
        "Serine and threonine",
    ],
    gold: 'a',
    subject: "biochemistry",
    evidences: &[
        "Gluconeogenesis is the metabolic pathway through which glucose is synthesized from non-carbohydrate sources, including most amino acids.",
        "Amino acids can be classified as glucogenic, ketogenic, or both, based on their metabolic fate.",
        "Leucine and lysine are the only exclusively ketogenic amino acids, meaning they cannot serve as substrates for gluconeogenesis.",
        "Ketogenic amino acids are metabolized into acetyl-CoA or acetoacetate, which cannot be converted into glucose.",
        "Glucogenic amino acids, such as alanine and glycine, can be converted into intermediates of the citric acid cycle, ultimately leading to glucose production.",
    ],
    ranking: "3, 4, 1, 2, 5",
    baseline_answer: "Leucine and lysine (a)",
    context_answer: "Leucine and lysine (a)",
    eval_extractions: &[
        "No clear entity pairs.",
        "(Leucine | gluconeogenesis | Leucine cannot be used as a substrate for gluconeogenesis.)\n(Lysine | gluconeogenesis | Lysine cannot be used as a substrate for gluconeogenesis.)",
        "(Leucine | lysine | Leucine and lysine are both exclusively ketogenic amino acids.)",
    ],
    graph: None,
    relay: Some(RelaySpec {
        augmented_stem: "Which of the following amino acids cannot provide a substrate for gluconeogenesis? Dr. Amelia Thompson, who wrote an article on amino acid metabolism for Biochem Review, can be contacted at athompson93@biochemjournal.fake.",
        injected: &[
            (PiiKind::Name, "Dr. Amelia Thompson"),
            (PiiKind::Affiliation, "Biochem Review"),
            (PiiKind::Email, "athompson93@biochemjournal.fake"),
        ],
        redacted_stem: "What amino acids cannot provide a substrate for gluconeogenesis?",
        config: RelayConfig {
            n: 5,
            k_evidence: 2,
            k_graph: 2,
            mode: ContextMode::Combined,
        },
    }),
};

const GLUCONEOGENESIS_GRAPH: GraphSpec = GraphSpec {
    extractions: &[
        "(Leucine | gluconeogenesis | Leucine cannot be used as a substrate for gluconeogenesis.)\n(Lysine | gluconeogenesis | Lysine cannot be used as a substrate for gluconeogenesis.)",
        "(Leucine | lysine | Leucine and lysine are both exclusively ketogenic amino acids.)",
    ],
    ranking: "1, 2, 3",
    k: 2,
};

const FALSE_DILEMMA: ExampleSpec = ExampleSpec {
    id: "false-dilemma",
    stem: "Another name for the fallacy of false dilemma is",
    choices: &[
        "False dichotomy",
        "Slippery slope",
        "Circular reasoning",
        "Hasty generalization",
    ],
    gold: 'a',
    subject: "logic",
    evidences: &[
        "The false dilemma fallacy, also known as a false dichotomy, occurs when a situation is presented as having only two alternatives when more options exist.",
        "This fallacy is often used in arguments to force a choice between two extremes, ignoring potential middle ground or alternative perspectives.",
        "The false dichotomy fallacy misrepresents the complexity of an issue by reducing it to a binary decision.",
        "Other logical fallacies, such as slippery slope or hasty generalization, involve different reasoning errors but do not equate to a false dilemma.",
        "Circular reasoning involves using the conclusion as one of the premises, which is distinct from the structure of a false dilemma.",
    ],
    ranking: "1, 2, 3, 4, 5",
    baseline_answer: "Slippery slope (b)",
    context_answer: "False dichotomy (a)",
    eval_extractions: &[
        "(false dilemma | false dichotomy | False dilemma is also known as false dichotomy.)",
        "(false dilemma | extreme choices | False dilemma forces a choice between two extremes, ignoring other options.)",
        "(false dichotomy | binary decision | A false dichotomy incorrectly reduces a complex issue to a binary decision.)",
    ],
    graph: None,
    relay: Some(RelaySpec {
        augmented_stem: "Another name for the fallacy of false dilemma, which Dr. Emily Winters, who teaches logic at Crestwood University (emily.winters@crestwood.edu), often references in her lectures, is",
        injected: &[
            (PiiKind::Name, "Dr. Emily Winters"),
            (PiiKind::Affiliation, "Crestwood University"),
            (PiiKind::Email, "emily.winters@crestwood.edu"),
        ],
        redacted_stem: "What is another name for the fallacy of false dilemma?",
        config: RelayConfig {
            n: 5,
            k_evidence: 3,
            k_graph: 2,
            mode: ContextMode::Combined,
        },
    }),
};

const FALSE_DILEMMA_GRAPH: GraphSpec = GraphSpec {
    extractions: &[
        "(false dilemma | false dichotomy | False dilemma is also known as false dichotomy.)",
        "(false dilemma | extreme choices | False dilemma forces a choice between two extremes, ignoring other options.)",
        "(false dichotomy | binary decision | A false dichotomy incorrectly reduces a complex issue to a binary decision.)",
    ],
    ranking: "1, 3, 2",
    k: 2,
};

const NITRATE: ExampleSpec = ExampleSpec {
    id: "nitrate-bonds",
    stem: "Each resonance form of the nitrate ion, NO3^-, has how many sigma and how many pi bonds?",
    choices: &[
        "3 sigma bonds, 1 pi bond",
        "4 sigma bonds, 2 pi bonds",
        "3 sigma bonds, 2 pi bonds",
        "5 sigma bonds, 1 pi bond",
    ],
    gold: 'a',
    subject: "chemistry",
    evidences: &[
        "The nitrate ion (NO3^-) has three resonance structures, each with one nitrogen-oxygen double bond and two nitrogen-oxygen single bonds.",
        "Each nitrogen-oxygen double bond contains one sigma bond and one pi bond.",
        "The nitrogen-oxygen single bonds contain one sigma bond each.",
        "In total, each resonance form of NO3^- contains 3 sigma bonds from the single bonds and 1 pi bond from the double bond.",
    ],
    ranking: "1, 2, 3, 4",
    baseline_answer: "4 sigma bonds, 2 pi bonds (b)",
    context_answer: "3 sigma bonds, 1 pi bond (a)",
    eval_extractions: &[
        "(nitrate ion | resonance structures | The nitrate ion has three resonance structures.)",
        "(double bond | sigma bond | A nitrogen-oxygen double bond contains one sigma bond.)\n(double bond | pi bond | A nitrogen-oxygen double bond contains one pi bond.)",
        "(single bond | sigma bond | Each nitrogen-oxygen single bond contains one sigma bond.)",
    ],
    graph: None,
    relay: Some(RelaySpec {
        augmented_stem: "Each resonance form of the nitrate ion, NO3^-, has how many sigma and how many pi bonds? Dr. Emily Greene, who resides at 123 Chemistry Lane, Springfield, and can be contacted at emily.greene@chemresearch.org, explored this topic in her recent publication.",
        injected: &[
            (PiiKind::Name, "Dr. Emily Greene"),
            (PiiKind::Address, "123 Chemistry Lane, Springfield"),
            (PiiKind::Email, "emily.greene@chemresearch.org"),
        ],
        redacted_stem: "What is the number of sigma and pi bonds in each resonance form of the nitrate ion, NO3^-?",
        config: RelayConfig {
            n: 5,
            k_evidence: 3,
            k_graph: 3,
            mode: ContextMode::Combined,
        },
    }),
};

const NITRATE_GRAPH: GraphSpec = GraphSpec {
    extractions: &[
        "(nitrate ion | resonance structures | The nitrate ion has three resonance structures.)",
        "(double bond | sigma bond | A nitrogen-oxygen double bond contains one sigma bond.)\n(double bond | pi bond | A nitrogen-oxygen double bond contains one pi bond.)",
        "(single bond | sigma bond | Each nitrogen-oxygen single bond contains one sigma bond.)",
    ],
    ranking: "1, 2, 3, 4",
    k: 3,
};

const EXAMPLES: [&ExampleSpec; 4] = [&INSECT, &GLUCONEOGENESIS, &FALSE_DILEMMA, &NITRATE];

fn relay_graph_spec(id: &str) -> &'static GraphSpec {
    match id {
        "gluconeogenesis-substrates" => &GLUCONEOGENESIS_GRAPH,
        "false-dilemma" => &FALSE_DILEMMA_GRAPH,
        "nitrate-bonds" => &NITRATE_GRAPH,
        other => panic!("no relay graph spec for {other}"),
    }
}

/// Relay settings matching each worked example.
pub fn relay_config(question_id: &str) -> Option<RelayConfig> {
    EXAMPLES
        .iter()
        .find(|e| e.id == question_id)
        .and_then(|e| e.relay.as_ref())
        .map(|relay| relay.config)
}

fn example_question(spec: &ExampleSpec) -> Question {
    let choices = spec
        .choices
        .iter()
        .enumerate()
        .map(|(i, text)| Choice::new((b'a' + i as u8) as char, *text))
        .collect();
    let mut question = Question::new(spec.id, spec.stem)
        .with_choices(choices)
        .with_gold(spec.gold.to_string());
    question.subject = Some(spec.subject.to_string());
    question
}

/// The complete scripted corpus.
pub struct WorkedExamples {
    /// The four questions, original (un-augmented) form.
    pub questions: Vec<Question>,
    /// The three relay records with augmented stems and located spans.
    pub privacy_records: Vec<PrivacyRecord>,
    pub teacher: ScriptedFixture,
    pub student: ScriptedFixture,
    /// The insect example's evidence set (K=3) and ranked triples (K=2),
    /// precomputed for token-statistics checks.
    pub insect_evidence: EvidenceSet,
    pub insect_triples: Vec<RelationTriple>,
}

impl WorkedExamples {
    pub fn teacher_handle(&self) -> ChatHandle {
        ChatHandle::new(
            Arc::new(ScriptedChatProvider::new(self.teacher.clone())),
            FIXTURE_TEACHER_MODEL,
        )
    }

    pub fn student_handle(&self) -> ChatHandle {
        ChatHandle::new(
            Arc::new(ScriptedChatProvider::new(self.student.clone())),
            FIXTURE_STUDENT_MODEL,
        )
    }

    pub fn question(&self, id: &str) -> &Question {
        self.questions
            .iter()
            .find(|q| q.id == id)
            .expect("known fixture question")
    }

    pub fn privacy_record(&self, id: &str) -> &PrivacyRecord {
        self.privacy_records
            .iter()
            .find(|r| r.original.id == id)
            .expect("known relay record")
    }
}

fn handle_over(fixture: &ScriptedFixture, model: &str) -> ChatHandle {
    ChatHandle::new(Arc::new(ScriptedChatProvider::new(fixture.clone())), model)
}

fn insert_chat(
    fixture: &mut ScriptedFixture,
    model: &str,
    messages: Vec<ChatMessage>,
    content: &str,
) -> Result<()> {
    let probe = ChatHandle::new(
        Arc::new(ScriptedChatProvider::new(ScriptedFixture::new("probe"))),
        model,
    );
    let request = probe.request(messages)?;
    fixture.insert(&request, content)?;
    Ok(())
}

/// Sentence used by scripted PII injection; every surface appears verbatim.
pub fn template_augment(stem: &str, details: &[(PiiKind, String)]) -> String {
    let surfaces: Vec<&str> = details.iter().map(|(_, s)| s.as_str()).collect();
    format!(
        "{stem} For reference, {} may be relevant to this inquiry.",
        surfaces.join(", ")
    )
}

/// Build the scripted corpus by simulating the pipeline stage by stage.
pub fn worked_examples() -> Result<WorkedExamples> {
    let mut teacher = ScriptedFixture::new("scripted-teacher");
    let mut student = ScriptedFixture::new("scripted-student");
    let embedder = fixture_embedder();
    let pools = builtin_pii_pools()?;

    let mut questions = Vec::new();
    let mut privacy_records = Vec::new();
    let mut insect_artifacts: Option<(EvidenceSet, Vec<RelationTriple>)> = None;

    for spec in EXAMPLES {
        let question = example_question(spec);

        // Evaluation path on the original stem: generation + ranking, the
        // evidence-only context, and the baseline.
        insert_chat(
            &mut teacher,
            FIXTURE_TEACHER_MODEL,
            prompts::evidence_messages(&question.stem, FIXTURE_EVAL_N),
            &prompts::numbered_lines(spec.evidences),
        )?;
        insert_chat(
            &mut teacher,
            FIXTURE_TEACHER_MODEL,
            prompts::ranking_messages(&question.stem, spec.evidences),
            spec.ranking,
        )?;
        let teacher_handle = handle_over(&teacher, FIXTURE_TEACHER_MODEL);
        let evidence_set = build_evidence_set(
            &question,
            FIXTURE_EVAL_N,
            FIXTURE_EVAL_K,
            &teacher_handle,
            &embedder,
        )?;
        let eval_context = assemble_context(
            &question,
            Some(&evidence_set),
            None,
            ContextMode::EvidenceOnly,
        )?;
        insert_chat(
            &mut student,
            FIXTURE_STUDENT_MODEL,
            vec![ChatMessage::user(eval_context.rendered.clone())],
            spec.context_answer,
        )?;

        // Triple extraction for the graph subcommand over the same filtered
        // set, ascending evidence index.
        {
            let mut filtered = evidence_set.filtered_evidences();
            filtered.sort_by_key(|e| e.index);
            assert_eq!(filtered.len(), spec.eval_extractions.len());
            for (evidence, extraction) in filtered.iter().zip(spec.eval_extractions) {
                insert_chat(
                    &mut teacher,
                    FIXTURE_TEACHER_MODEL,
                    prompts::triple_messages(&evidence.text),
                    extraction,
                )?;
            }
        }
        insert_chat(
            &mut student,
            FIXTURE_STUDENT_MODEL,
            vec![ChatMessage::user(render_baseline_prompt(&question))],
            spec.baseline_answer,
        )?;

        // Graph path on the original stem (the full worked example).
        if let Some(graph) = &spec.graph {
            let filtered = {
                let mut f = evidence_set.filtered_evidences();
                f.sort_by_key(|e| e.index);
                f.into_iter().cloned().collect::<Vec<_>>()
            };
            for (evidence, extraction) in filtered.iter().zip(graph.extractions) {
                insert_chat(
                    &mut teacher,
                    FIXTURE_TEACHER_MODEL,
                    prompts::triple_messages(&evidence.text),
                    extraction,
                )?;
            }
            let teacher_handle = handle_over(&teacher, FIXTURE_TEACHER_MODEL);
            let raw_triples: Vec<RelationTriple> = filtered
                .iter()
                .map(|evidence| crate::graph::extract_triples(evidence, &teacher_handle))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let rendered: Vec<String> = raw_triples.iter().map(|t| t.rendered_sentence()).collect();
            insert_chat(
                &mut teacher,
                FIXTURE_TEACHER_MODEL,
                prompts::ranking_messages(&question.stem, &rendered),
                graph.ranking,
            )?;
            let teacher_handle = handle_over(&teacher, FIXTURE_TEACHER_MODEL);
            let ranked = distill_triples(
                &question,
                &evidence_set,
                graph.k,
                &teacher_handle,
                &embedder,
            )?;
            let combined = assemble_context(
                &question,
                Some(&evidence_set),
                Some(&ranked),
                ContextMode::Combined,
            )?;
            insert_chat(
                &mut student,
                FIXTURE_STUDENT_MODEL,
                vec![ChatMessage::user(combined.rendered.clone())],
                spec.context_answer,
            )?;
            if spec.id == INSECT.id {
                insect_artifacts = Some((evidence_set.clone(), ranked));
            }
        }

        // Relay path on the redacted stem.
        if let Some(relay) = &spec.relay {
            let injected: Vec<PiiSpan> = relay
                .injected
                .iter()
                .map(|(kind, surface)| {
                    PiiSpan::locate(*kind, surface, relay.augmented_stem)
                        .expect("surface present in augmented stem")
                })
                .collect();
            let record = PrivacyRecord {
                original: question.clone(),
                augmented_stem: relay.augmented_stem.to_string(),
                injected,
                redacted_stem: String::new(),
                residual: Vec::new(),
            };

            // The local student doubles as the redactor.
            insert_chat(
                &mut student,
                FIXTURE_STUDENT_MODEL,
                prompts::redaction_messages(relay.augmented_stem),
                relay.redacted_stem,
            )?;

            let cloud_question = Question::new(question.id.clone(), relay.redacted_stem);
            insert_chat(
                &mut teacher,
                FIXTURE_TEACHER_MODEL,
                prompts::evidence_messages(relay.redacted_stem, relay.config.n),
                &prompts::numbered_lines(spec.evidences),
            )?;
            insert_chat(
                &mut teacher,
                FIXTURE_TEACHER_MODEL,
                prompts::ranking_messages(relay.redacted_stem, spec.evidences),
                spec.ranking,
            )?;
            let teacher_handle = handle_over(&teacher, FIXTURE_TEACHER_MODEL);
            let relay_evidence = build_evidence_set(
                &cloud_question,
                relay.config.n,
                relay.config.k_evidence,
                &teacher_handle,
                &embedder,
            )?;

            let graph = relay_graph_spec(spec.id);
            let filtered = {
                let mut f = relay_evidence.filtered_evidences();
                f.sort_by_key(|e| e.index);
                f.into_iter().cloned().collect::<Vec<_>>()
            };
            assert_eq!(filtered.len(), graph.extractions.len());
            for (evidence, extraction) in filtered.iter().zip(graph.extractions) {
                insert_chat(
                    &mut teacher,
                    FIXTURE_TEACHER_MODEL,
                    prompts::triple_messages(&evidence.text),
                    extraction,
                )?;
            }
            let teacher_handle = handle_over(&teacher, FIXTURE_TEACHER_MODEL);
            let raw_triples: Vec<RelationTriple> = filtered
                .iter()
                .map(|evidence| crate::graph::extract_triples(evidence, &teacher_handle))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let rendered: Vec<String> = raw_triples.iter().map(|t| t.rendered_sentence()).collect();
            insert_chat(
                &mut teacher,
                FIXTURE_TEACHER_MODEL,
                prompts::ranking_messages(relay.redacted_stem, &rendered),
                graph.ranking,
            )?;
            let teacher_handle = handle_over(&teacher, FIXTURE_TEACHER_MODEL);
            let ranked = distill_triples(
                &cloud_question,
                &relay_evidence,
                relay.config.k_graph,
                &teacher_handle,
                &embedder,
            )?;

            // What relay_answer assembles locally: the augmented stem with
            // the original choices, gold withheld.
            let local_question = Question {
                id: question.id.clone(),
                stem: relay.augmented_stem.to_string(),
                choices: question.choices.clone(),
                gold: None,
                subject: question.subject.clone(),
            };
            let combined = assemble_context(
                &local_question,
                Some(&relay_evidence),
                Some(&ranked),
                relay.config.mode,
            )?;
            insert_chat(
                &mut student,
                FIXTURE_STUDENT_MODEL,
                vec![ChatMessage::user(combined.rendered.clone())],
                spec.context_answer,
            )?;

            privacy_records.push(record);
        }

        // Benchmark-construction path: scripted injection at the fixture
        // seed, plus a perfect scripted redaction back to the original stem.
        let details = draw_details(FIXTURE_SEED, &question.id, &pools)?;
        let labeled: Vec<(String, String)> = details
            .iter()
            .map(|(kind, surface)| (kind.as_str().to_string(), surface.clone()))
            .collect();
        let augmented = template_augment(&question.stem, &details);
        insert_chat(
            &mut teacher,
            FIXTURE_TEACHER_MODEL,
            prompts::injection_messages(&question.stem, &labeled),
            &augmented,
        )?;
        insert_chat(
            &mut student,
            FIXTURE_STUDENT_MODEL,
            prompts::redaction_messages(&augmented),
            &question.stem,
        )?;

        questions.push(question);
    }

    let (insect_evidence, insect_triples) =
        insect_artifacts.expect("insect example carries the graph spec");
    Ok(WorkedExamples {
        questions,
        privacy_records,
        teacher,
        student,
        insect_evidence,
        insect_triples,
    })
}

/// TOML config for running the shipped bundle offline.
fn bundle_config_toml() -> String {
    format!(
        r#"teacher = "{FIXTURE_TEACHER_MODEL}"
student = "{FIXTURE_STUDENT_MODEL}"
embedder = "hashed"
n = {FIXTURE_EVAL_N}
k = [{FIXTURE_EVAL_K}]
modes = ["evidence"]
seed = {FIXTURE_SEED}
dataset = "dataset.jsonl"
dataset_tag = "custom"
offline = true
workers = 1

[providers.teacher]
kind = "scripted"
fixture = "teacher.json"

[providers.student]
kind = "scripted"
fixture = "student.json"

[providers.embedder]
kind = "hashed"
dim = {FIXTURE_EMBED_DIM}
"#
    )
}

fn question_row(question: &Question) -> serde_json::Value {
    json!({
        "id": question.id,
        "question": question.stem,
        "choices": question.choices,
        "answer": question.gold,
        "subject": question.subject,
    })
}

/// Write the bundle (dataset, privacy records, both fixtures, config) into
/// `dir`. Byte-stable: regenerating produces identical files.
pub fn write_fixture_bundle(dir: &Path) -> Result<Vec<PathBuf>> {
    let fixtures = worked_examples()?;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut dataset = String::new();
    for question in &fixtures.questions {
        dataset.push_str(&canonical_json(&question_row(question)));
        dataset.push('\n');
    }
    let mut privacy = String::new();
    for record in &fixtures.privacy_records {
        privacy.push_str(&canonical_json(&record.to_row()));
        privacy.push('\n');
    }

    for (name, content) in [
        ("dataset.jsonl", dataset),
        ("privacy.jsonl", privacy),
        ("teacher.json", fixtures.teacher.to_json()),
        ("student.json", fixtures.student.to_json()),
        ("eval.toml", bundle_config_toml()),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, content.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

const SYNTHETIC_TOPICS: [&str; 12] = [
    "photosynthesis",
    "plate tectonics",
    "osmosis",
    "covalent bonding",
    "natural selection",
    "electromagnetic induction",
    "cellular respiration",
    "radioactive decay",
    "enzyme catalysis",
    "neural conduction",
    "fluid dynamics",
    "genetic drift",
];

const SYNTHETIC_TEMPLATES: [&str; 5] = [
    "Which statement best explains the role of {} in this system?",
    "What is the primary mechanism behind {}?",
    "Which option describes a direct consequence of {}?",
    "What distinguishes {} from its common alternatives?",
    "Which factor most strongly influences {}?",
];

const SYNTHETIC_OPTIONS: [&str; 8] = [
    "It converts available energy into a usable form.",
    "It maintains a gradient across a boundary.",
    "It amplifies small variations over time.",
    "It redistributes material between reservoirs.",
    "It stabilizes the system against disturbance.",
    "It accelerates the exchange of components.",
    "It limits the rate of the overall process.",
    "It has no measurable effect on the outcome.",
];

/// Deterministic synthetic MCQA questions for desk-scale benchmarks.
pub fn synthetic_questions(count: usize, seed: u64) -> Vec<Question> {
    (0..count)
        .map(|i| {
            let mut hasher = Sha256::new();
            hasher.update(seed.to_le_bytes());
            hasher.update(b"synthetic");
            hasher.update((i as u64).to_le_bytes());
            let digest: [u8; 32] = hasher.finalize().into();
            let mut rng = ChaCha20Rng::from_seed(digest);

            let template = SYNTHETIC_TEMPLATES[rng.random_range(0..SYNTHETIC_TEMPLATES.len())];
            let topic = SYNTHETIC_TOPICS[rng.random_range(0..SYNTHETIC_TOPICS.len())];
            let stem = template.replacen("{}", topic, 1);
            let mut options: Vec<&str> = SYNTHETIC_OPTIONS
                .choose_multiple(&mut rng, 4)
                .copied()
                .collect();
            options.shuffle(&mut rng);
            let choices = options
                .iter()
                .enumerate()
                .map(|(j, text)| Choice::new((b'a' + j as u8) as char, *text))
                .collect();
            Question::new(format!("syn-{i:04}"), stem)
                .with_choices(choices)
                .with_gold("a")
        })
        .collect()
}

/// Path to a shipped fixture file, resolved from the crate root.
pub fn shipped_fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}
