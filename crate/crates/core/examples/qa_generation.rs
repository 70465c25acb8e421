//! Generates question-answer pairs from help documents with a scripted model,
//! then resumes without repeating finished documents.
//!
//!     cargo run --example qa_generation

use ragforge::corpus::{read_jsonl, Document};
use ragforge::llm::ScriptedProvider;
use ragforge::qa_gen::{generate_for_corpus, render_markers, Exemplar, GeneratedQa, GeneratorConfig, QaPair};

fn main() -> ragforge::Result<()> {
    let docs = vec![
        Document::helpx("crop", "Crop an image", "Select the Crop tool, drag the handles, then press Enter."),
        Document::helpx("layers", "Add a layer", "Choose Layer > New > Layer and name it."),
    ];
    let exemplars = vec![Exemplar {
        document: "Rotate a page: choose Organize Pages and click the rotate arrows.".into(),
        qa: vec![QaPair {
            question: "How do I rotate a PDF page?".into(),
            answer: "Open Organize Pages and click the rotate arrows.".into(),
        }],
    }];
    // Stands in for a real model: one pair per prompt, echoing the target title.
    let model = ScriptedProvider::from_fn(|req| {
        let target = req.prompt.rsplit("Document:").next().unwrap_or("").trim();
        let title: String = target.split_whitespace().take(3).collect::<Vec<_>>().join(" ");
        vec![render_markers(&[QaPair {
            question: format!("How do I {}?", title.to_lowercase()),
            answer: format!("Follow the steps in \"{title}\"."),
        }])]
    });

    let dir = tempfile::tempdir()?;
    let sink = dir.path().join("qa.jsonl");
    let cfg = GeneratorConfig::default();
    let first = generate_for_corpus(&docs, &exemplars, &model, &cfg, &sink)?;
    println!("first run:  {first:?}");
    let again = generate_for_corpus(&docs, &exemplars, &model, &cfg, &sink)?;
    println!("second run: {again:?}");
    for qa in read_jsonl::<GeneratedQa>(&sink)? {
        println!("[{}] Q: {}\n        A: {}", qa.source_doc_id, qa.question, qa.answer);
    }
    Ok(())
}
