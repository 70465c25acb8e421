//! Serves /ask, /retrieve, /health and /catalog over a small in-memory index.
//!
//!     cargo run --example serve
//!     curl -s localhost:8080/ask -H 'content-type: application/json' \
//!          -d '{"query": "merge pdf files"}'

use std::net::SocketAddr;
use std::sync::Arc;

use ragforge::corpus::Document;
use ragforge::embedder::{Embedder, FeatureConfig, Projection};
use ragforge::llm::{LlmClient, ScriptedProvider};
use ragforge::product_intent::ProductCatalog;
use ragforge::rag::{service, RagConfig, RagEngine};
use ragforge::vector_index::Index;

const CATALOG: &str = include_str!("../data/catalog.json");

fn main() -> ragforge::Result<()> {
    tracing_subscriber::fmt().init();
    let docs = vec![
        Document::helpx("merge", "Merge PDF files", "Choose Tools > Combine Files and add your PDFs.")
            .with_tags(["Adobe Acrobat"]),
        Document::helpx("crop", "Crop an image", "Select the Crop tool and drag the handles.")
            .with_tags(["Adobe Photoshop"]),
    ];
    let features = FeatureConfig::default();
    let embedder = Embedder::new(Projection::identity(features.dim), features)?;
    let index = Index::build(&docs, &embedder)?;
    let model: Arc<dyn LlmClient> = Arc::new(ScriptedProvider::from_fn(|req| {
        let top = req.prompt.lines().find_map(|l| l.strip_prefix("Answer: ")).unwrap_or("");
        vec![format!("From the help pages: {top}")]
    }));
    let engine = RagEngine::new(
        index,
        embedder,
        Some(ProductCatalog::from_json_str(CATALOG)?),
        model,
        RagConfig::default(),
    )?;
    let addr: SocketAddr = ([127, 0, 0, 1], 8080).into();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(Arc::new(engine), addr, &[]))?;
    Ok(())
}
