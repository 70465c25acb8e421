//! Retrieval-aware finetuning records: grounded positives, mid-similarity
//! negatives, and refusal samples.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qa_gen::GeneratedQa;
use crate::rag::UNANSWERABLE;
use crate::vector_index::Index;

pub const DEFAULT_SAMPLE_TEMPLATE: &str = "### Context\n{context}\n\n### Question\n{question}\n\n### Answer\n{answer}\n";

/// Stream reserved for choosing which records become unanswerable.
const UNANSWERABLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub min_answer_tokens: usize,
    pub top_k_positives: usize,
    pub negatives_per_sample: usize,
    pub tau_sim: f64,
    pub tau_dissim: f64,
    pub unanswerable_fraction: f64,
    pub rng_seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            min_answer_tokens: 90,
            top_k_positives: 2,
            negatives_per_sample: 3,
            tau_sim: 0.6,
            tau_dissim: 0.2,
            unanswerable_fraction: 0.1,
            rng_seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_dissim && self.tau_dissim < self.tau_sim && self.tau_sim <= 1.0) {
            return Err(Error::config(
                "finetune.tau_dissim",
                format!("need 0 <= tau_dissim < tau_sim <= 1, got {} and {}", self.tau_dissim, self.tau_sim),
            ));
        }
        if !(0.0..=1.0).contains(&self.unanswerable_fraction) {
            return Err(Error::config("finetune.unanswerable_fraction", "must lie in [0, 1]"));
        }
        if self.top_k_positives == 0 {
            return Err(Error::config("finetune.top_k_positives", "must be at least 1"));
        }
        Ok(())
    }

    /// Inclusive at `tau_dissim`, exclusive at `tau_sim`.
    pub fn in_band(&self, sim: f64) -> bool {
        sim >= self.tau_dissim && sim < self.tau_sim
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub question: String,
    pub answer: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub answerable: bool,
    pub source_doc_id: String,
    pub positive_ids: Vec<String>,
    pub negative_ids: Vec<String>,
    /// Fewer negatives than requested were available in the band.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub underfilled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub source_doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub input: usize,
    pub dropped_short: usize,
    pub skipped: Vec<SkippedPair>,
    pub answerable: usize,
    pub unanswerable: usize,
    pub underfilled: usize,
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps pairs whose answer has at least `min_answer_tokens` whitespace tokens.
pub fn filter_short_answers(pairs: &[GeneratedQa], cfg: &FinetuneConfig) -> (Vec<GeneratedQa>, usize) {
    let kept: Vec<GeneratedQa> = pairs
        .iter()
        .filter(|p| token_count(&p.answer) >= cfg.min_answer_tokens)
        .cloned()
        .collect();
    let dropped = pairs.len() - kept.len();
    (kept, dropped)
}

fn record_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index positions ordered by similarity to the item at `grounded`,
/// excluding it; ties broken by item id.
fn neighbours(index: &Index, grounded: usize) -> Result<Vec<(usize, f64)>> {
    let scores = index.scores(&index.items()[grounded].embedding)?;
    let mut order: Vec<(usize, f64)> = scores.into_iter().enumerate().filter(|&(i, _)| i != grounded).collect();
    order.sort_by(|a, b| {
        b.1.total_cmp(&a.1).then_with(|| {
            index.items()[a.0]
                .payload
                .item_id
                .cmp(&index.items()[b.0].payload.item_id)
        })
    });
    Ok(order)
}

fn grounded_position(index: &Index, doc_id: &str) -> Result<usize> {
    index
        .position(doc_id)
        .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))
}

/// Ids of the grounded document plus its `top_k_positives - 1` nearest items.
pub fn select_positives(pair: &GeneratedQa, index: &Index, cfg: &FinetuneConfig) -> Result<Vec<String>> {
    let g = grounded_position(index, &pair.source_doc_id)?;
    let mut out = vec![pair.source_doc_id.clone()];
    out.extend(
        neighbours(index, g)?
            .into_iter()
            .take(cfg.top_k_positives - 1)
            .map(|(i, _)| index.items()[i].payload.item_id.clone()),
    );
    Ok(out)
}

/// Uniform sample without replacement from items whose similarity to the
/// grounded document is in the band, never returning an excluded id.
pub fn sample_negatives(
    pair: &GeneratedQa,
    index: &Index,
    cfg: &FinetuneConfig,
    exclude: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>> {
    let g = grounded_position(index, &pair.source_doc_id)?;
    let scores = index.scores(&index.items()[g].embedding)?;
    let band: Vec<&str> = index
        .items()
        .iter()
        .zip(&scores)
        .enumerate()
        .filter(|&(i, (item, &s))| {
            i != g && cfg.in_band(s) && !exclude.contains(&item.payload.item_id)
        })
        .map(|(_, (item, _))| item.payload.item_id.as_str())
        .collect();
    Ok(band
        .choose_multiple(rng, cfg.negatives_per_sample)
        .map(|s| s.to_string())
        .collect())
}

fn text_of(index: &Index, id: &str) -> String {
    index.get(id).map(|it| it.payload.context_text()).unwrap_or_default()
}

/// Length-filters `pairs`, then builds one record per pair whose grounded
/// document is in the index. An exact `round(fraction * records)` of them,
/// chosen by seed among records with negatives, become unanswerable.
pub fn build_dataset(
    pairs: &[GeneratedQa],
    index: &Index,
    cfg: &FinetuneConfig,
) -> Result<(Vec<FinetuneRecord>, FinetuneReport)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no question-answer pairs"));
    }
    let (kept, dropped_short) = filter_short_answers(pairs, cfg);
    let mut report = FinetuneReport {
        input: pairs.len(),
        dropped_short,
        ..Default::default()
    };

    let mut records = Vec::with_capacity(kept.len());
    for (n, pair) in kept.iter().enumerate() {
        let positive_ids = match select_positives(pair, index, cfg) {
            Ok(p) => p,
            Err(Error::UnknownDoc(id)) => {
                tracing::warn!(doc = %id, "grounded document not in index; pair skipped");
                report.skipped.push(SkippedPair {
                    source_doc_id: id,
                    reason: "grounded document not in index".into(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut rng = record_rng(cfg.rng_seed, n as u64);
        let negative_ids = sample_negatives(pair, index, cfg, &positive_ids, &mut rng)?;
        let underfilled = negative_ids.len() < cfg.negatives_per_sample;
        records.push(FinetuneRecord {
            question: pair.question.clone(),
            answer: pair.answer.clone(),
            positives: positive_ids.iter().map(|id| text_of(index, id)).collect(),
            negatives: negative_ids.iter().map(|id| text_of(index, id)).collect(),
            answerable: true,
            source_doc_id: pair.source_doc_id.clone(),
            positive_ids,
            negative_ids,
            underfilled,
        });
    }

    let target = (cfg.unanswerable_fraction * records.len() as f64).round() as usize;
    let eligible: Vec<usize> = (0..records.len()).filter(|&i| !records[i].negatives.is_empty()).collect();
    if eligible.len() < target {
        tracing::warn!(target, eligible = eligible.len(), "not enough records with negatives to convert");
    }
    let mut rng = record_rng(cfg.rng_seed, UNANSWERABLE_STREAM);
    for &i in eligible.choose_multiple(&mut rng, target) {
        let r = &mut records[i];
        r.positives.clear();
        r.positive_ids.clear();
        r.answer = UNANSWERABLE.to_string();
        r.answerable = false;
    }

    report.unanswerable = records.iter().filter(|r| !r.answerable).count();
    report.answerable = records.len() - report.unanswerable;
    report.underfilled = records.iter().filter(|r| r.underfilled).count();
    Ok((records, report))
}

/// Renders one record with `{context}`, `{question}` and `{answer}` filled.
///
/// Positives and negatives are interleaved in a seeded shuffle so the
/// grounded passage has no fixed position.
pub fn render_training_sample(record: &FinetuneRecord, template: &str, seed: u64, ordinal: u64) -> String {
    let mut blocks: Vec<&str> = record
        .positives
        .iter()
        .chain(&record.negatives)
        .map(String::as_str)
        .collect();
    blocks.shuffle(&mut record_rng(seed, ordinal));
    let context = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| format!("[Document {}]\n{}", i + 1, b.trim()))
        .collect::<Vec<_>>()
        .join("\n\n");
    let mut out = String::with_capacity(template.len() + context.len() + record.answer.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let (value, len) = [
            ("{context}", context.as_str()),
            ("{question}", record.question.trim()),
            ("{answer}", record.answer.trim()),
        ]
        .into_iter()
        .find(|(k, _)| tail.starts_with(k))
        .map(|(k, v)| (v, k.len()))
        .unwrap_or(("{", 1));
        out.push_str(value);
        rest = &tail[len..];
    }
    out.push_str(rest);
    out
}

/// Similarity of every index item to the grounded document, used by checks
/// that want an exhaustive view of the band.
pub fn grounded_similarities(index: &Index, doc_id: &str) -> Result<Vec<(String, f64)>> {
    let g = grounded_position(index, doc_id)?;
    let scores = index.scores(&index.items()[g].embedding)?;
    let mut out: Vec<(String, f64)> = index
        .items()
        .iter()
        .zip(scores)
        .map(|(it, s)| (it.payload.item_id.clone(), s))
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(out)
}
