//! Compiles finetuning records with similar-but-wrong distractor contexts
//! and a share of unanswerable samples, then renders one of each.
//!
//!     cargo run --example finetune_set

use ragforge::embedder::{Embedder, FeatureConfig, Projection};
use ragforge::eval::{synth_clicks, SynthConfig};
use ragforge::finetune::{build_dataset, render_training_sample, FinetuneConfig, DEFAULT_SAMPLE_TEMPLATE};
use ragforge::qa_gen::GeneratedQa;
use ragforge::vector_index::Index;

fn main() -> ragforge::Result<()> {
    let corpus = synth_clicks(&SynthConfig {
        topics: 6,
        docs_per_topic: 12,
        queries_per_topic: 4,
        ..Default::default()
    })?;
    let features = FeatureConfig::default();
    let index = Index::build(&corpus.documents, &Embedder::new(Projection::identity(features.dim), features)?)?;
    let pairs: Vec<GeneratedQa> = corpus
        .documents
        .iter()
        .take(40)
        .map(|d| GeneratedQa {
            question: format!("What does {} cover?", d.title),
            answer: std::iter::repeat_n(d.description.as_str(), 20).collect::<Vec<_>>().join(" "),
            source_doc_id: d.item_id.clone(),
            generator: "example".into(),
        })
        .collect();

    let cfg = FinetuneConfig::default();
    let (records, report) = build_dataset(&pairs, &index, &cfg)?;
    println!(
        "{} answerable, {} unanswerable, {} under-filled, {} dropped for short answers",
        report.answerable, report.unanswerable, report.underfilled, report.dropped_short
    );
    for want in [true, false] {
        if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.answerable == want) {
            println!("\n--- answerable = {want} ---");
            println!("{}", render_training_sample(r, DEFAULT_SAMPLE_TEMPLATE, cfg.rng_seed, i as u64));
        }
    }
    Ok(())
}
