//! Turns a raw click log into graded training pairs.
//!
//!     cargo run --example click_relevance

use std::collections::HashMap;
use std::io::Cursor;

use ragforge::click_ingest::{compute_relevance, parse_click_log};
use ragforge::corpus::Document;

const LOG: &str = r#"{"query": "Edit PDF", "doc_id": "edit-text", "clicks": 100}
{"query": "edit pdf", "doc_id": "edit-images", "clicks": 24}
{"query": "edit pdf", "doc_id": "retired-page", "clicks": 500}
{"query": "merge pdfs", "doc_id": "combine", "clicks": 7}
not json
"#;

fn main() -> ragforge::Result<()> {
    let docs: HashMap<String, Document> = [
        Document::helpx("edit-text", "Edit text in PDFs", "Select Edit PDF and click the text to change."),
        Document::helpx("edit-images", "Edit images in PDFs", "Select Edit PDF, then click an image."),
        Document::helpx("combine", "Combine files", "Choose Tools > Combine Files."),
    ]
    .into_iter()
    .map(|d| (d.item_id.clone(), d))
    .collect();

    let parsed = parse_click_log(Cursor::new(LOG))?;
    println!("{} aggregated records, {} malformed lines", parsed.records.len(), parsed.skipped);
    let out = compute_relevance(&parsed.records, &docs)?;
    println!("{} records pointed at unknown docs and were dropped", out.unresolved);
    for p in &out.pairs {
        println!("{:.2}  {:<12} {}", p.ratio, p.query, p.doc_text);
    }
    Ok(())
}
