//! Answers a question end to end: product detection, retrieval,
//! de-duplication across sources, prompt assembly and completion.
//!
//!     cargo run --example rag_answer ["your question"]

use std::sync::Arc;

use ragforge::corpus::{Document, SourceKind};
use ragforge::embedder::{Embedder, FeatureConfig, Projection};
use ragforge::llm::{LlmClient, ScriptedProvider};
use ragforge::product_intent::ProductCatalog;
use ragforge::rag::{RagConfig, RagEngine};
use ragforge::vector_index::Index;

const CATALOG: &str = include_str!("../data/catalog.json");

fn main() -> ragforge::Result<()> {
    let query = std::env::args().nth(1).unwrap_or_else(|| "how do I create a blank pdf in acrobat".into());
    let answer = "Open Acrobat and choose Tools > Create PDF > Blank Page.";
    let docs = vec![
        Document::helpx("helpx-blank", "Create a blank PDF", answer).with_tags(["Adobe Acrobat"]),
        // Near-duplicate of the help page from a less credible source.
        Document::qa("forum-9", SourceKind::CommunityQuestion, "Create a blank PDF?", answer).with_tags(["Adobe Acrobat"]),
        Document::helpx("helpx-merge", "Merge PDF files", "Choose Tools > Combine Files and add your PDFs.")
            .with_tags(["Adobe Acrobat"]),
        Document::helpx("ai-new", "Create a new document", "Choose File > New and pick a blank preset.")
            .with_tags(["Adobe Illustrator"]),
    ];
    let features = FeatureConfig::default();
    let embedder = Embedder::new(Projection::identity(features.dim), features)?;
    let index = Index::build(&docs, &embedder)?;
    let model: Arc<dyn LlmClient> =
        Arc::new(ScriptedProvider::from_fn(|_| vec!["Open Acrobat, then Tools > Create PDF > Blank Page.".into()]));
    let engine = RagEngine::new(
        index,
        embedder,
        Some(ProductCatalog::from_json_str(CATALOG)?),
        model,
        RagConfig::default(),
    )?;

    match engine.answer(&query) {
        Ok(bundle) => {
            println!("products: {:?}", bundle.products.products);
            for item in &bundle.used_items {
                println!("context {}: {} ({:.3})", item.rank, item.payload.item_id, item.score);
            }
            for d in &bundle.dropped_duplicates {
                println!("dropped {} as a duplicate of {} ({:?})", d.dropped, d.kept, d.reason);
            }
            println!("\n{}\n\nanswer: {}", bundle.prompt, bundle.answer);
        }
        Err(e) => eprintln!("failed: {}", e.error),
    }
    Ok(())
}
