//! Scores candidate answers against gold answers with the sampled LLM judge.
//!
//!     cargo run --example judge

use ragforge::eval::{judge_rows, JudgeRow};
use ragforge::llm::ScriptedProvider;

fn main() -> ragforge::Result<()> {
    // A stand-in judge that mostly agrees with itself and sometimes rambles.
    let judge = ScriptedProvider::script(["4", "5 - nearly identical", "4", "I cannot tell", "3"]);
    let rows = vec![
        JudgeRow {
            id: "q1".into(),
            question: "How do I crop an image?".into(),
            gold: "Select the Crop tool and drag the handles.".into(),
            candidate: "Use the Crop tool, then drag its handles.".into(),
        },
        JudgeRow {
            id: "q2".into(),
            question: "How do I merge PDFs?".into(),
            gold: "Choose Tools > Combine Files.".into(),
            candidate: "Open Combine Files from the Tools menu.".into(),
        },
    ];
    let report = judge_rows(&rows, &judge)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
