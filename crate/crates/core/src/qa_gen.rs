//! Few-shot question/answer generation from documents and transcripts.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SourceKind};
use crate::error::{Error, Result};
use crate::llm::{CompletionRequest, LlmClient};

pub const DEFAULT_QA_TEMPLATE: &str = "You are an AI assistant that helps create question-answer pairs. \
You start every question with QUESTION and every answer with ANSWER. Answer in detail.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

/// A sample document with the pairs we want the model to imitate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub document: String,
    pub qa: Vec<QaPair>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaGenPrompt {
    pub system_text: String,
    pub exemplars: Vec<Exemplar>,
    pub target_document: String,
}

impl QaGenPrompt {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(self.system_text.trim_end());
        out.push_str("\n\n");
        for ex in &self.exemplars {
            out.push_str("Document:\n");
            out.push_str(ex.document.trim());
            out.push_str("\n\n");
            out.push_str(&render_markers(&ex.qa));
            out.push('\n');
        }
        out.push_str("Document:\n");
        out.push_str(self.target_document.trim());
        out.push('\n');
        out
    }
}

/// Renders pairs in the marker format the parser reads back.
pub fn render_markers(pairs: &[QaPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str("QUESTION: ");
        out.push_str(p.question.trim());
        out.push_str("\nANSWER: ");
        out.push_str(p.answer.trim());
        out.push('\n');
    }
    out
}

pub fn build_prompt(doc: &Document, exemplars: &[Exemplar], template: &str) -> Result<QaGenPrompt> {
    let target = doc.context_text();
    if target.trim().is_empty() {
        return Err(Error::InvalidInput(format!("document `{}` has no text", doc.item_id)));
    }
    Ok(QaGenPrompt {
        system_text: template.to_string(),
        exemplars: exemplars.to_vec(),
        target_document: target,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQa {
    pub pairs: Vec<QaPair>,
    /// QUESTION blocks with no ANSWER, plus pairs with an empty side.
    pub dropped: usize,
}

enum Marker<'a> {
    Question(&'a str),
    Answer(&'a str),
}

fn marker(line: &str) -> Option<Marker<'_>> {
    let line = line.trim_start();
    let strip = |tag: &str| -> Option<&str> {
        let rest = line.strip_prefix(tag)?;
        match rest.chars().next() {
            None => Some(""),
            Some(':') => Some(rest[1..].trim()),
            Some(c) if c.is_whitespace() => Some(rest.trim()),
            Some(_) => None,
        }
    };
    strip("QUESTION")
        .map(Marker::Question)
        .or_else(|| strip("ANSWER").map(Marker::Answer))
}

/// Splits model output on line-initial QUESTION/ANSWER markers.
pub fn parse_qa_markers(output: &str) -> Result<ParsedQa> {
    let mut pairs = Vec::new();
    let mut dropped = 0;
    let mut question: Option<Vec<&str>> = None;
    let mut answer: Option<Vec<&str>> = None;

    let flush = |q: Option<Vec<&str>>, a: Option<Vec<&str>>, pairs: &mut Vec<QaPair>, dropped: &mut usize| {
        match (q, a) {
            (Some(q), Some(a)) => {
                let question = q.join("\n").trim().to_string();
                let answer = a.join("\n").trim().to_string();
                if question.is_empty() || answer.is_empty() {
                    *dropped += 1;
                } else {
                    pairs.push(QaPair { question, answer });
                }
            }
            (Some(_), None) => *dropped += 1,
            _ => {}
        }
    };

    for line in output.lines() {
        match marker(line) {
            Some(Marker::Question(rest)) => {
                flush(question.take(), answer.take(), &mut pairs, &mut dropped);
                question = Some(if rest.is_empty() { vec![] } else { vec![rest] });
            }
            Some(Marker::Answer(rest)) => {
                if question.is_none() {
                    return Err(Error::QaParse { raw: output.to_string() });
                }
                if let Some(a) = answer.as_mut() {
                    // second ANSWER for one QUESTION: keep it as answer text
                    a.push(line.trim());
                } else {
                    answer = Some(if rest.is_empty() { vec![] } else { vec![rest] });
                }
            }
            None => {
                if let Some(a) = answer.as_mut() {
                    a.push(line.trim_end());
                } else if let Some(q) = question.as_mut() {
                    q.push(line.trim());
                }
            }
        }
    }
    flush(question, answer, &mut pairs, &mut dropped);

    if pairs.is_empty() {
        return Err(Error::QaParse { raw: output.to_string() });
    }
    if dropped > 0 {
        tracing::warn!(dropped, "dropped unpaired or empty QUESTION blocks");
    }
    Ok(ParsedQa { pairs, dropped })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQa {
    pub question: String,
    pub answer: String,
    pub source_doc_id: String,
    pub generator: String,
}

impl GeneratedQa {
    /// Index record for this pair. Transcript sources yield video QA items,
    /// everything else Helpx QA items; tags and url are inherited.
    pub fn to_document(&self, ordinal: usize, source: Option<&Document>) -> Document {
        let kind = match source.map(|d| d.kind) {
            Some(SourceKind::GeneratedVideoQa) => SourceKind::GeneratedVideoQa,
            _ => SourceKind::GeneratedHelpxQa,
        };
        let mut doc = Document::qa(
            format!("{}#qa{ordinal}", self.source_doc_id),
            kind,
            self.question.clone(),
            self.answer.clone(),
        );
        if let Some(src) = source {
            doc.url = src.url.clone();
            doc.product_tags = src.product_tags.clone();
        }
        doc
    }
}

/// Converts generated pairs to index documents, numbering per source doc.
pub fn generated_to_documents(qa: &[GeneratedQa], sources: &HashMap<String, Document>) -> Vec<Document> {
    let mut ordinals: HashMap<&str, usize> = HashMap::new();
    qa.iter()
        .map(|q| {
            let n = ordinals.entry(q.source_doc_id.as_str()).or_insert(0);
            *n += 1;
            q.to_document(*n, sources.get(&q.source_doc_id))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub template: String,
    pub few_shot: bool,
    pub max_per_doc: usize,
    pub chunk_words: usize,
    pub concurrency: usize,
    pub max_tokens: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            template: DEFAULT_QA_TEMPLATE.to_string(),
            few_shot: true,
            max_per_doc: 8,
            chunk_words: 2000,
            concurrency: 4,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub ok: usize,
    pub failed: usize,
    pub skipped: usize,
    pub pairs_written: usize,
    pub failures: Vec<(String, String)>,
}

fn chunk_document(doc: &Document, words: usize) -> Vec<Document> {
    let body: Vec<&str> = doc.description.split_whitespace().collect();
    if words == 0 || body.len() <= words {
        return vec![doc.clone()];
    }
    body.chunks(words)
        .map(|c| Document {
            description: c.join(" "),
            ..doc.clone()
        })
        .collect()
}

fn generate_one(
    doc: &Document,
    exemplars: &[Exemplar],
    client: &dyn LlmClient,
    cfg: &GeneratorConfig,
) -> std::result::Result<Vec<GeneratedQa>, String> {
    let shots: &[Exemplar] = if cfg.few_shot { exemplars } else { &[] };
    let mut out = Vec::new();
    let mut last_err = None;
    for chunk in chunk_document(doc, cfg.chunk_words) {
        let prompt = build_prompt(&chunk, shots, &cfg.template).map_err(|e| e.to_string())?;
        let mut req = CompletionRequest::new(prompt.render());
        req.max_tokens = cfg.max_tokens;
        let parsed = client
            .complete(&req)
            .and_then(|r| parse_qa_markers(r.samples.first().map(String::as_str).unwrap_or("")));
        match parsed {
            Ok(p) => out.extend(p.pairs.into_iter().map(|qa| GeneratedQa {
                question: qa.question,
                answer: qa.answer,
                source_doc_id: doc.item_id.clone(),
                generator: client.name().to_string(),
            })),
            Err(e) => last_err = Some(e.to_string()),
        }
    }
    if out.is_empty() {
        return Err(last_err.unwrap_or_else(|| "no pairs".into()));
    }
    out.truncate(cfg.max_per_doc.max(1));
    Ok(out)
}

fn failures_path(sink: &Path) -> PathBuf {
    let mut name = sink.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".failures.jsonl");
    sink.with_file_name(name)
}

#[derive(Serialize, Deserialize)]
struct FailureLine {
    doc_id: String,
    reason: String,
}

fn seen_ids(sink: &Path) -> Result<BTreeSet<String>> {
    let mut seen = BTreeSet::new();
    if sink.exists() {
        let file = fs::File::open(sink).map_err(|e| Error::io_at(sink, e))?;
        for line in BufReader::new(file).lines() {
            let line = line?;
            if let Ok(qa) = serde_json::from_str::<GeneratedQa>(&line) {
                seen.insert(qa.source_doc_id);
            }
        }
    }
    let failed = failures_path(sink);
    if failed.exists() {
        let file = fs::File::open(&failed).map_err(|e| Error::io_at(&failed, e))?;
        for line in BufReader::new(file).lines() {
            if let Ok(f) = serde_json::from_str::<FailureLine>(&line?) {
                seen.insert(f.doc_id);
            }
        }
    }
    Ok(seen)
}

/// Generates pairs for every document not already present in `sink`.
///
/// Successes are appended to `sink` (JSONL of [`GeneratedQa`]); failures go
/// to `<sink>.failures.jsonl`. Both files are consulted on the next run, so
/// no document is sent to the model twice.
pub fn generate_for_corpus(
    docs: &[Document],
    exemplars: &[Exemplar],
    client: &dyn LlmClient,
    cfg: &GeneratorConfig,
    sink: &Path,
) -> Result<GenerationReport> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("no documents for QA generation"));
    }
    if cfg.few_shot && exemplars.is_empty() {
        return Err(Error::config("qa.few_shot", "few-shot mode needs at least one exemplar"));
    }
    let seen = seen_ids(sink)?;
    let open = |p: &Path| {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .map_err(|e| Error::io_at(p, e))
    };
    let mut out = open(sink)?;
    let fail_path = failures_path(sink);
    let mut report = GenerationReport::default();

    let pending: Vec<&Document> = docs
        .iter()
        .filter(|d| {
            let skip = seen.contains(&d.item_id);
            if skip {
                report.skipped += 1;
            }
            !skip
        })
        .collect();

    for wave in pending.chunks(cfg.concurrency.max(1)) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = wave
                .iter()
                .map(|doc| s.spawn(move || generate_one(doc, exemplars, client, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err("generation thread panicked".into())))
                .collect()
        });
        for (doc, result) in wave.iter().zip(results) {
            match result {
                Ok(pairs) => {
                    for qa in &pairs {
                        serde_json::to_writer(&mut out, qa)?;
                        out.write_all(b"\n").map_err(|e| Error::io_at(sink, e))?;
                    }
                    report.ok += 1;
                    report.pairs_written += pairs.len();
                }
                Err(reason) => {
                    tracing::warn!(doc = %doc.item_id, %reason, "QA generation failed");
                    let mut f = open(&fail_path)?;
                    serde_json::to_writer(
                        &mut f,
                        &FailureLine { doc_id: doc.item_id.clone(), reason: reason.clone() },
                    )?;
                    f.write_all(b"\n").map_err(|e| Error::io_at(&fail_path, e))?;
                    report.failed += 1;
                    report.failures.push((doc.item_id.clone(), reason));
                }
            }
        }
        out.flush().map_err(|e| Error::io_at(sink, e))?;
    }
    Ok(report)
}
